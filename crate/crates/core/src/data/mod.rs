//! Corpus ingestion: CoNLL-U, vocabularies, character streams,
//! pretrained embeddings, feature bundles and dev splitting.

pub mod conllu;
pub mod embeddings;
pub mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use conllu::{parse_conllu, read_conllu, write_conllu, Line, Sentence, Task, Token};
pub use embeddings::{load_pretrained, read_pretrained, PretrainedEmbeddings};
pub use vocab::{build_vocabs, EncodedSentence, Index, Vocabs, SPACE_ID, UNK, UNK_ID};

/// Characters of a sentence and the inclusive span of each token.
pub type CharStream = (Vec<char>, Vec<(usize, usize)>);

/// Joins `forms` with single spaces into one character stream and returns
/// it with the inclusive `(first, last)` character span of each form.
pub fn char_stream_build(forms: &[&str]) -> Result<CharStream> {
    if forms.is_empty() {
        return Err(Error::EmptySequence("char_stream_build"));
    }
    let mut chars = Vec::new();
    let mut spans = Vec::with_capacity(forms.len());
    for (i, form) in forms.iter().enumerate() {
        if form.is_empty() {
            return Err(Error::EmptyForm);
        }
        if i > 0 {
            chars.push(' ');
        }
        let first = chars.len();
        chars.extend(form.chars());
        spans.push((first, chars.len() - 1));
    }
    Ok((chars, spans))
}

/// Canonical single-tag form of a FEATS column: `Name=Value` pairs sorted
/// by name (then value) and re-joined with `|`. `_` stays `_`.
pub fn morph_bundle_tag(feats: &str) -> Result<String> {
    if feats == "_" {
        return Ok("_".to_string());
    }
    let mut pairs: Vec<(&str, &str)> = feats
        .split('|')
        .map(|pair| match pair.split_once('=') {
            Some((name, value)) if !name.is_empty() && !value.is_empty() => Ok((name, value)),
            _ => Err(Error::MalformedFeature(pair.to_string())),
        })
        .collect::<Result<_>>()?;
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join("|"))
}

/// Seeded split of a corpus by sentence. The dev part receives
/// `ceil(fraction * n)` sentences (at least one, at most `n - 1`); both
/// parts keep the original relative order.
pub fn dev_split<T: Clone>(corpus: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("dev fraction {fraction} outside (0, 1)")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split a corpus of {n} sentences")));
    }
    let dev_count = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..dev_count] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::with_capacity(n - dev_count), Vec::with_capacity(dev_count));
    for (item, d) in corpus.iter().zip(is_dev) {
        if d {
            dev.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, dev))
}
