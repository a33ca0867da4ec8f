use std::io::Cursor;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use metatag_core::data::{
    build_vocabs, char_stream_build, dev_split, morph_bundle_tag, parse_conllu, read_pretrained, write_conllu, Sentence, Task, SPACE_ID, UNK_ID,
};
use metatag_core::eval::{ablation_csv, ablation_report, paired_t, score, summarize, AblationRow};
use metatag_core::Error;

const SAMPLE: &str = "# sent_id = 1\n# text = I had shingles.\n1\tI\tI\tPRON\tPRP\tCase=Nom|Number=Sing|Person=1|PronType=Prs\t2\tnsubj\t_\t_\n2\thad\thave\tVERB\tVBD\tMood=Ind|Tense=Past|VerbForm=Fin\t0\troot\t_\t_\n3-4\tshingles.\t_\t_\t_\t_\t_\t_\t_\t_\n3\tshingles\tshingle\tNOUN\tNNS\tNumber=Plur\t2\tobj\t_\t_\n4\t.\t.\tPUNCT\t.\t_\t2\tpunct\t_\t_\n\n1\tOk\tok\tINTJ\tUH\t_\t0\troot\t_\t_\n1.1\tgone\tgo\tVERB\tVBN\t_\t_\t_\t0:root\t_\n\n";

#[test]
fn conllu_round_trip_is_byte_identical() {
    let s = parse_conllu(SAMPLE).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].forms(), vec!["I", "had", "shingles", "."]);
    assert_eq!(s[1].forms(), vec!["Ok"]);
    assert_eq!(write_conllu(&s), SAMPLE);
    assert_eq!(s[0].tags(Task::Upos).unwrap(), vec!["PRON", "VERB", "NOUN", "PUNCT"]);
    assert_eq!(s[0].tags(Task::Feats).unwrap()[0], "Case=Nom|Number=Sing|Person=1|PronType=Prs");
}

#[test]
fn parse_errors_carry_line_numbers() {
    match parse_conllu("1\tI\tI\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    match parse_conllu(&format!("{}x\tI\t_\t_\t_\t_\t_\t_\t_\t_\n", &SAMPLE[..SAMPLE.len() - 1])) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
        other => panic!("{other:?}"),
    }
}

#[test]
fn running_example_character_stream() {
    let (chars, spans) = char_stream_build(&["I", "had", "shingles"]).unwrap();
    assert_eq!(chars.iter().collect::<String>(), "I had shingles");
    assert_eq!(spans, vec![(0, 0), (2, 4), (6, 13)]);
    assert!(matches!(char_stream_build(&[]), Err(Error::EmptySequence(_))));
    assert!(matches!(char_stream_build(&["a", ""]), Err(Error::EmptyForm)));
}

#[test]
fn vocabulary_reserves_unknown_and_space() {
    let s = parse_conllu(SAMPLE).unwrap();
    let v = build_vocabs(&s, Task::Xpos, 1, false).unwrap();
    assert_eq!(v.words.name(UNK_ID), Some("<unk>"));
    assert_eq!(v.chars.name(SPACE_ID), Some(" "));
    let e = v.encode(&Sentence::from_tagged(&[("I", "PRP"), ("zzz", "XX")], Task::Xpos)).unwrap();
    assert_eq!(e.word_ids[1], UNK_ID);
    assert_eq!(e.char_ids[1], SPACE_ID);
    assert_eq!(e.char_ids[2], UNK_ID);
    assert_eq!(e.tags[1], None);
    assert_eq!(v.tag_name(e.tags[0].unwrap()), "PRP");
}

#[test]
fn pretrained_reader_aligns_rows_and_reports_coverage() {
    let s = parse_conllu(SAMPLE).unwrap();
    let v = build_vocabs(&s, Task::Xpos, 1, false).unwrap();
    let text = "3 2\nhad 1 2\nok 3 4\nnowhere 5 6\n";
    let p = read_pretrained(Cursor::new(text), &v.words, true).unwrap();
    assert_eq!(p.dim, 2);
    assert_eq!(p.matrix.row_slice(v.word_id("had")), &[1.0, 2.0]);
    assert_eq!(p.matrix.row_slice(v.word_id("Ok")), &[3.0, 4.0]);
    assert_eq!(p.matrix.row_slice(UNK_ID), &[0.0, 0.0]);
    // I, had, shingles, ., Ok: two covered
    assert_eq!(p.covered, 2);
    assert_abs_diff_eq!(p.coverage, 0.4);
    let p = read_pretrained(Cursor::new(text), &v.words, false).unwrap();
    assert_eq!(p.covered, 1);
    assert!(matches!(
        read_pretrained(Cursor::new("had 1 2\nI 1\n"), &v.words, false),
        Err(Error::EmbeddingDimension {
            line: 2,
            expected: 2,
            found: 1
        })
    ));
}

/// Counts matching task-column entries by walking every token.
fn brute_accuracy(gold: &[Sentence], pred: &[Sentence], task: Task) -> f64 {
    let mut hit = 0;
    let mut all = 0;
    for (g, p) in gold.iter().zip(pred) {
        for (a, b) in g.tokens.iter().zip(&p.tokens) {
            all += 1;
            let canon = |t: &metatag_core::data::Token| {
                let raw = t.columns[task.column()].clone();
                if task == Task::Feats {
                    morph_bundle_tag(&raw).unwrap_or(raw)
                } else {
                    raw
                }
            };
            hit += usize::from(canon(a) == canon(b));
        }
    }
    hit as f64 / all as f64
}

#[test]
fn scorer_counts_tokens() {
    let gold = vec![
        Sentence::from_tagged(&[("a", "X"), ("b", "Y")], Task::Upos),
        Sentence::from_tagged(&[("c", "Z"), ("d", "Z")], Task::Upos),
    ];
    let pred = vec![
        Sentence::from_tagged(&[("a", "X"), ("b", "X")], Task::Upos),
        Sentence::from_tagged(&[("c", "Z"), ("d", "Z")], Task::Upos),
    ];
    let r = score(&gold, &pred, Task::Upos).unwrap();
    assert_eq!((r.total, r.correct), (4, 3));
    assert_eq!(r.accuracy, 0.75);
    assert_eq!(r.top_errors(5), vec![("Y", "X", 1)]);
    assert_eq!(r.to_string(), "task=upos tokens=4 correct=3 accuracy=0.750000");
    assert!(matches!(score(&gold, &pred[..1], Task::Upos), Err(Error::Alignment(_))));
    let short = vec![pred[0].clone(), Sentence::from_tagged(&[("c", "Z")], Task::Upos)];
    assert!(matches!(score(&gold, &short, Task::Upos), Err(Error::Alignment(_))));
}

#[test]
fn feature_bundles_compare_canonically() {
    let gold = vec![Sentence::from_tagged(&[("a", "B=2|A=1"), ("b", "_"), ("c", "A=1")], Task::Feats)];
    let pred = vec![Sentence::from_tagged(&[("a", "A=1|B=2"), ("b", "_"), ("c", "A=2")], Task::Feats)];
    assert_abs_diff_eq!(score(&gold, &pred, Task::Feats).unwrap().accuracy, 2.0 / 3.0);
    assert_eq!(morph_bundle_tag("Tense=Past|Mood=Ind").unwrap(), "Mood=Ind|Tense=Past");
    assert!(matches!(morph_bundle_tag("Tense"), Err(Error::MalformedFeature(_))));
}

#[test]
fn ablation_helpers() {
    let rows: Vec<AblationRow> = [("a", 0.5), ("b", 0.25), ("a", 0.7), ("b", 0.75)]
        .iter()
        .enumerate()
        .map(|(i, (c, acc))| AblationRow {
            config: c.to_string(),
            seed: i as u64,
            task: Task::Xpos,
            accuracy: *acc,
        })
        .collect();
    let rep = ablation_report(&rows);
    assert_eq!(rep[0].0, "a");
    assert_abs_diff_eq!(rep[0].1.mean, 0.6, epsilon = 1e-12);
    assert_abs_diff_eq!(rep[1].1.stdev, 0.125f64.sqrt(), epsilon = 1e-12);
    let csv = ablation_csv(&rows).unwrap();
    assert_eq!(csv.lines().next(), Some("config,seed,task,accuracy"));
    assert_eq!(csv.lines().nth(1), Some("a,0,xpos,0.500000"));
    // differences 0.1, 0.2, 0.3: mean 0.2, sd 0.1, t = 0.2 / (0.1 / sqrt 3)
    let t = paired_t(&[0.6, 0.7, 0.8], &[0.5, 0.5, 0.5]).unwrap();
    assert_abs_diff_eq!(t.t, 2.0 * 3f64.sqrt(), epsilon = 1e-9);
    assert_eq!(t.df, 2);
    assert!(t.p > 0.05 && t.p < 0.1, "{}", t.p);
    assert!(paired_t(&[1.0], &[1.0]).is_err());
}

fn sentences(tagged: &[Vec<(String, String)>]) -> Vec<Sentence> {
    tagged
        .iter()
        .map(|s| {
            let pairs: Vec<(&str, &str)> = s.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            Sentence::from_tagged(&pairs, Task::Xpos)
        })
        .collect()
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<(String, String)>>> {
    prop::collection::vec(prop::collection::vec(("[a-zé]{1,6}", "[A-C]"), 1..6), 1..6)
}

proptest! {
    #[test]
    fn char_stream_spans_recover_forms(forms in prop::collection::vec("[a-zé.,]{1,7}", 1..8)) {
        let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
        let (chars, spans) = char_stream_build(&refs).unwrap();
        let total: usize = forms.iter().map(|f| f.chars().count()).sum::<usize>() + forms.len() - 1;
        prop_assert_eq!(chars.len(), total);
        for (f, &(a, b)) in forms.iter().zip(&spans) {
            prop_assert_eq!(chars[a..=b].iter().collect::<String>(), f.clone());
        }
        for w in spans.windows(2) {
            prop_assert_eq!(w[1].0, w[0].1 + 2);
            prop_assert_eq!(chars[w[0].1 + 1], ' ');
        }
    }

    #[test]
    fn morph_bundle_is_order_invariant_and_idempotent(pairs in prop::collection::vec(("[A-Z][a-z]{0,4}", "[A-Za-z0-9]{1,4}"), 1..6), rot in 0usize..6) {
        let mut joined: Vec<String> = pairs.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let a = morph_bundle_tag(&joined.join("|")).unwrap();
        let k = rot % joined.len();
        joined.rotate_left(k);
        joined.reverse();
        let b = morph_bundle_tag(&joined.join("|")).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(morph_bundle_tag(&a).unwrap(), a);
    }

    #[test]
    fn dev_split_partitions(n in 2usize..60, fraction in 0.01f64..0.99, seed in 0u64..50) {
        let items: Vec<usize> = (0..n).collect();
        let (train, dev) = dev_split(&items, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + dev.len(), n);
        prop_assert!(!train.is_empty() && !dev.is_empty());
        prop_assert!(train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(dev.windows(2).all(|w| w[0] < w[1]));
        let mut all: Vec<usize> = train.iter().chain(&dev).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(dev_split(&items, fraction, seed).unwrap(), (train, dev));
    }

    #[test]
    fn scorer_matches_brute_force(gold in corpus_strategy(), flips in prop::collection::vec(any::<bool>(), 36)) {
        let g = sentences(&gold);
        let mut k = 0;
        let pred_tags: Vec<Vec<(String, String)>> = gold
            .iter()
            .map(|s| {
                s.iter()
                    .map(|(f, t)| {
                        k += 1;
                        let t = if flips[k % flips.len()] { format!("{t}x") } else { t.clone() };
                        (f.clone(), t)
                    })
                    .collect()
            })
            .collect();
        let p = sentences(&pred_tags);
        let r = score(&g, &p, Task::Xpos).unwrap();
        prop_assert!((r.accuracy - brute_accuracy(&g, &p, Task::Xpos)).abs() < 1e-12);
        prop_assert_eq!(score(&g, &g, Task::Xpos).unwrap().accuracy, 1.0);
        // sentence order does not change the score when both sides are permuted alike
        let (mut g2, mut p2) = (g.clone(), p.clone());
        g2.reverse();
        p2.reverse();
        prop_assert_eq!(score(&g2, &p2, Task::Xpos).unwrap().accuracy, r.accuracy);
        prop_assert_eq!(r.confusion.values().sum::<usize>(), r.total);
    }

    #[test]
    fn conllu_write_parse_round_trip(tagged in corpus_strategy()) {
        let s = sentences(&tagged);
        let text = write_conllu(&s);
        prop_assert_eq!(parse_conllu(&text).unwrap(), s);
    }

    #[test]
    fn summary_matches_definition(v in prop::collection::vec(0.0f64..1.0, 2..12)) {
        let s = summarize(&v);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
        prop_assert!((s.mean - mean).abs() < 1e-12);
        prop_assert!((s.stdev - var.sqrt()).abs() < 1e-12);
    }
}
