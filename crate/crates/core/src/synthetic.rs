//! Small artificial languages with known tagging rules, used to test
//! properties of the models at desk scale.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Sentence, Task};

const ONSETS: &[&str] = &["b", "d", "f", "g", "l", "m", "n", "p", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// A training and a development corpus, both tagged in the XPOS column.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
}

/// `count` distinct random CV-syllable stems of one or two syllables.
fn stems(rng: &mut ChaCha8Rng, count: usize, exclude: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(1..=2);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push_str(ONSETS.choose(rng).expect("non-empty"));
            s.push_str(NUCLEI.choose(rng).expect("non-empty"));
        }
        if !out.contains(&s) && !exclude.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn sentence(tokens: &[(String, String)]) -> Sentence {
    let pairs: Vec<(&str, &str)> = tokens.iter().map(|(f, t)| (f.as_str(), t.as_str())).collect();
    Sentence::from_tagged(&pairs, Task::Xpos)
}

/// Every token is a stem plus one of four suffixes. The tag of a token is
/// decided by the suffix of the token before it (`-ka`/`-ru` give `A`,
/// `-ki`/`-ro` give `B`); the first token is tagged `S`. The token's own
/// form carries no information about its tag, and development sentences
/// use stems never seen in training.
pub fn neighbour_suffix_language(seed: u64, train_sentences: usize, dev_sentences: usize) -> SyntheticCorpus {
    const SUFFIXES: [(&str, &str); 4] = [("ka", "A"), ("ki", "B"), ("ru", "A"), ("ro", "B")];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_stems = stems(&mut rng, 60, &[]);
    let dev_stems = stems(&mut rng, 60, &train_stems);
    let make = |rng: &mut ChaCha8Rng, stems: &[String]| {
        let len = rng.random_range(4..=8);
        let mut tokens = Vec::with_capacity(len);
        let mut tag = "S";
        for _ in 0..len {
            let (suffix, next) = *SUFFIXES.choose(rng).expect("non-empty");
            let stem = stems.choose(rng).expect("non-empty");
            tokens.push((format!("{stem}{suffix}"), tag.to_string()));
            tag = next;
        }
        sentence(&tokens)
    };
    let train = (0..train_sentences).map(|_| make(&mut rng, &train_stems)).collect();
    let dev = (0..dev_sentences).map(|_| make(&mut rng, &dev_stems)).collect();
    SyntheticCorpus { train, dev }
}

/// Two complementary signals. Regular words are a stem plus a suffix that
/// determines the tag (`-an` N, `-et` V, `-ol` J); development sentences
/// mostly use unseen stems, so only the characters reveal their tag.
/// Exception words look regular but carry a lexically fixed, different
/// tag; they recur in both corpora, so a word-level model can memorise
/// them while the suffix rule misleads a character model.
pub fn complementary_language(seed: u64, train_sentences: usize, dev_sentences: usize) -> SyntheticCorpus {
    const RULES: [(&str, &str); 3] = [("an", "N"), ("et", "V"), ("ol", "J")];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_stems = stems(&mut rng, 80, &[]);
    let dev_stems = stems(&mut rng, 80, &train_stems);
    let exception_stems = stems(&mut rng, 12, &[train_stems.clone(), dev_stems.clone()].concat());
    let exceptions: Vec<(String, String)> = exception_stems
        .iter()
        .enumerate()
        .map(|(i, stem)| {
            let (suffix, _) = RULES[i % 3];
            let (_, tag) = RULES[(i + 1) % 3];
            (format!("{stem}{suffix}"), tag.to_string())
        })
        .collect();
    let make = |rng: &mut ChaCha8Rng, stems: &[String]| {
        let len = rng.random_range(4..=8);
        let tokens: Vec<(String, String)> = (0..len)
            .map(|_| {
                if rng.random_bool(0.3) {
                    exceptions.choose(rng).expect("non-empty").clone()
                } else {
                    let (suffix, tag) = *RULES.choose(rng).expect("non-empty");
                    (format!("{}{suffix}", stems.choose(rng).expect("non-empty")), tag.to_string())
                }
            })
            .collect();
        sentence(&tokens)
    };
    let train = (0..train_sentences).map(|_| make(&mut rng, &train_stems)).collect();
    let dev = (0..dev_sentences).map(|_| make(&mut rng, &dev_stems)).collect();
    SyntheticCorpus { train, dev }
}
