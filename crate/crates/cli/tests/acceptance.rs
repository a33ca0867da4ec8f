//! Acceptance suites. Prints one `[PASS]`/`[FAIL]` line per criterion.
//!
//! The process exits 0 even when a criterion fails so that the verdicts are
//! reported rather than hidden behind a test-harness failure; set
//! `METATAG_ACCEPTANCE_STRICT=1` to make any failure fatal.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use metatag_cli::config::RunConfig;
use metatag_cli::experiment::{ablate, synthetic_corpora, train_on, Axis, Corpora, Language};
use metatag_core::data::{build_vocabs, read_conllu, Sentence, Task};
use metatag_core::encoders::{GatherPoint, GatherStrategy};
use metatag_core::eval::{format_components_table, paired_t, score, summarize};
use metatag_core::gradcheck;
use metatag_core::model::{Part, TaggerModel};
use metatag_core::nn::Phase;
use metatag_core::tensor::Graph;
use metatag_core::training::{accuracy, joint_loss, part_loss, CharModel, Optimization, TrainConfig};

use common::{brute_force_count, fixture, golden_config, metatag, SCORER_FIXTURES};

type Verdict = Result<String, String>;

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const CORPUS_SEED: u64 = 1;

/// Desk-scale configuration of the synthetic suites.
fn small(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::default().scaled(32);
    c.model.char_lstm_layers = 1;
    c.model.word_lstm_layers = 1;
    c.max_epochs = epochs;
    c
}

fn gradient_suite() -> Verdict {
    let results = gradcheck::suite(1e-6).map_err(|e| e.to_string())?;
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is not empty");
    let detail = format!("{} checks, worst {} at {:.2e}", results.len(), worst.name, worst.max_rel_error);
    if worst.max_rel_error < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grad_masses(model: &TaggerModel, joint: bool) -> Result<[f64; 3], String> {
    let data = model.vocabs.encode_all(&tiny_corpus()).map_err(|e| e.to_string())?;
    let mut store = model.store.clone();
    store.zero_grad();
    for s in &data {
        let mut g = Graph::with_params(&model.store);
        let mut phase = Phase::train_seeded(7);
        let loss = if joint {
            joint_loss(&mut g, model, s, &mut phase)
        } else {
            part_loss(&mut g, model, s, Part::Meta, &mut phase)
        }
        .map_err(|e| e.to_string())?
        .ok_or("no loss")?;
        let grads = g.backward(loss).map_err(|e| e.to_string())?;
        store.accumulate(&grads);
    }
    Ok(Part::ALL.map(|p| store.grad_l1(&model.param_ids(p))))
}

fn tiny_corpus() -> Vec<Sentence> {
    vec![
        Sentence::from_tagged(&[("I", "PRP"), ("had", "VBD"), ("shingles", "NNS")], Task::Xpos),
        Sentence::from_tagged(&[("a", "DT"), ("rash", "NN"), ("spread", "VBD")], Task::Xpos),
    ]
}

fn isolation_suite() -> Verdict {
    let vocabs = build_vocabs(&tiny_corpus(), Task::Xpos, 1, false).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default().scaled(8);
    cfg.init.word_embeddings = metatag_core::training::config::EmbeddingInit::Gaussian;
    let model = TaggerModel::new(cfg, vocabs, None).map_err(|e| e.to_string())?;
    let separate = grad_masses(&model, false)?;
    let again = grad_masses(&model, false)?;
    let joint = grad_masses(&model, true)?;
    let detail = format!(
        "separate |grad| char={:.1e} word={:.1e} meta={:.3}; joint char={:.3} word={:.3}",
        separate[0], separate[1], separate[2], joint[0], joint[1]
    );
    let ok = separate[0] == 0.0 && separate[1] == 0.0 && separate[2] > 0.0 && joint.iter().all(|&m| m > 0.0) && separate == again;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn overfit_suite() -> Verdict {
    let corpus = synthetic_corpora(Language::Complementary, CORPUS_SEED, 50, 1);
    // dev = train, so checkpoint selection tracks training accuracy
    let corpora = Corpora {
        train: corpus.train.clone(),
        dev: corpus.train,
    };
    let mut cfg = TrainConfig::default().scaled(64);
    cfg.max_epochs = 200;
    cfg.target_train_accuracy = 0.995;
    let r = train_on(&cfg, &corpora, None, |_| {}).map_err(|e| e.to_string())?;
    let vocabs = &r.outcome.checkpoint.model.vocabs;
    let data = vocabs.encode_all(&corpora.train).map_err(|e| e.to_string())?;
    let acc = accuracy(&r.outcome.checkpoint.model, &data, Part::Meta).map_err(|e| e.to_string())?;
    let detail = format!(
        "50 sentences, LSTM 64 (3/3/1 layers): training accuracy {:.4} after {} epochs",
        acc,
        r.outcome.log.len() - 1
    );
    if acc >= 0.995 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn context_suite() -> Verdict {
    let corpora = synthetic_corpora(Language::Neighbour, CORPUS_SEED, 200, 100);
    let result = ablate(Axis::Context, &small(20), &corpora, "neighbour", &SEEDS, |l| eprintln!("  {l}")).map_err(|e| e.to_string())?;
    let pick = |name: &str| -> Vec<f64> { result.rows.iter().filter(|r| r.config == name).map(|r| r.accuracy).collect() };
    let (sent, tok) = (pick("sentence"), pick("token"));
    let wins = sent.iter().zip(&tok).filter(|(s, t)| *s - *t >= 0.02).count();
    let detail = format!(
        "sentence {:.2} vs token {:.2} mean meta accuracy; margin >= 2.0 points in {wins}/10 seeds",
        100.0 * summarize(&sent).mean,
        100.0 * summarize(&tok).mean
    );
    if wins >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Meta-combination and optimization-schema suites share the separate runs.
fn complementary_suites() -> (Verdict, Verdict) {
    let corpora = synthetic_corpora(Language::Complementary, CORPUS_SEED, 200, 100);
    let base = small(40);
    let components = match ablate(Axis::Components, &base, &corpora, "complementary", &SEEDS, |l| eprintln!("  {l}")) {
        Ok(a) => a.components.expect("components axis reports runs"),
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    println!("{}", format_components_table(std::slice::from_ref(&components)).trim_end());
    let good = (0..SEEDS.len())
        .filter(|&k| components.meta[k] >= components.char[k].max(components.word[k]) - 0.002)
        .count();
    let detail = format!("meta >= max(char, word) - 0.2 points in {good}/10 seeds");
    let meta_verdict = if good >= 8 { Ok(detail) } else { Err(detail) };

    let mut joint = Vec::new();
    for &seed in &SEEDS {
        let mut c = base.clone();
        c.seed = seed;
        c.optimization = Optimization::Joint;
        match train_on(&c, &corpora, None, |_| {}) {
            Ok(r) => {
                eprintln!("  joint seed={seed} meta={:.4}", r.accuracies[2]);
                joint.push(r.accuracies[2]);
            }
            Err(e) => return (meta_verdict, Err(e.to_string())),
        }
    }
    let (s, j) = (summarize(&components.meta), summarize(&joint));
    let t = paired_t(&components.meta, &joint)
        .map(|t| format!(", paired t={:.2} p={:.3}", t.t, t.p))
        .unwrap_or_default();
    let detail = format!(
        "separate {:.2} ± {:.2} vs joint {:.2} ± {:.2} mean meta accuracy{t}",
        100.0 * s.mean,
        100.0 * s.stdev,
        100.0 * j.mean,
        100.0 * j.stdev
    );
    (meta_verdict, if s.mean >= j.mean { Ok(detail) } else { Err(detail) })
}

fn scorer_suite() -> Verdict {
    for (name, task, correct, total) in SCORER_FIXTURES {
        let (g, p) = (fixture(&format!("{name}.gold.conllu")), fixture(&format!("{name}.pred.conllu")));
        let gold = read_conllu(&g).map_err(|e| e.to_string())?;
        let pred = read_conllu(&p).map_err(|e| e.to_string())?;
        let r = score(&gold, &pred, task).map_err(|e| e.to_string())?;
        let brute = brute_force_count(&fs::read_to_string(&g).unwrap(), &fs::read_to_string(&p).unwrap(), task);
        if (r.correct, r.total) != brute || brute != (correct, total) {
            return Err(format!(
                "{name}: scorer {}/{}, brute force {}/{}, hand {correct}/{total}",
                r.correct, r.total, brute.0, brute.1
            ));
        }
    }
    Ok(format!(
        "{} fixture pairs agree with the brute-force and hand counts",
        SCORER_FIXTURES.len()
    ))
}

fn determinism_suite() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |n: &str| dir.path().join(n).to_str().expect("utf-8 temp path").to_string();
    let o = metatag(&[
        "synth",
        "--language",
        "complementary",
        "--train-sentences",
        "40",
        "--dev-sentences",
        "20",
        "--train-out",
        &path("train.conllu"),
        "--dev-out",
        &path("dev.conllu"),
    ]);
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let o = metatag(&[
            "train",
            "--train",
            &path("train.conllu"),
            "--dev",
            &path("dev.conllu"),
            "--size",
            "16",
            "--max-epochs",
            "4",
            "--seed",
            "7",
            "--checkpoint",
            &path(&format!("{run}.ckpt")),
            "--log",
            &path(&format!("{run}.log")),
        ]);
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        let log = fs::read(path(&format!("{run}.log"))).map_err(|e| e.to_string())?;
        let ck = fs::read(path(&format!("{run}.ckpt"))).map_err(|e| e.to_string())?;
        outputs.push((log, ck));
    }
    let detail = format!(
        "two train runs: {} log bytes, {} checkpoint bytes",
        outputs[0].0.len(),
        outputs[0].1.len()
    );
    if outputs[0] == outputs[1] {
        Ok(detail)
    } else {
        Err(format!("{detail}; outputs differ"))
    }
}

fn gather_suite() -> Verdict {
    let corpus = vec![
        Sentence::from_tagged(&[("x", "A"), ("y", "B"), ("z", "A"), ("x", "B")], Task::Xpos),
        Sentence::from_tagged(&[("ab", "A"), ("c", "B")], Task::Xpos),
    ];
    let vocabs = build_vocabs(&corpus, Task::Xpos, 1, false).map_err(|e| e.to_string())?;
    let data = vocabs.encode_all(&corpus).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default().scaled(8);
    cfg.model.gather = GatherStrategy::all();
    let model = TaggerModel::new(cfg, vocabs, None).map_err(|e| e.to_string())?;
    let mut g = Graph::with_params(&model.store);
    let out = model.encode_char(&mut g, &data[0], &mut Phase::infer()).map_err(|e| e.to_string())?;
    let reps = g.value(out.reps);
    let h = 8;
    let block = |row: usize, p: GatherPoint| -> &[f64] {
        let k = GatherPoint::ALL.iter().position(|&q| q == p).expect("known point");
        &reps.row_slice(row)[k * h..(k + 1) * h]
    };
    for row in 0..4 {
        if block(row, GatherPoint::FFirst) != block(row, GatherPoint::FLast) || block(row, GatherPoint::BFirst) != block(row, GatherPoint::BLast) {
            return Err(format!("token {row}: first and last blocks differ"));
        }
    }

    let corpora = synthetic_corpora(Language::Complementary, CORPUS_SEED, 30, 10);
    let mut base = small(2);
    base.model.char_model = CharModel::Sentence;
    let result = ablate(Axis::Gather, &base, &corpora, "toy", &[1], |_| {}).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = result.rows.iter().map(|r| r.config.as_str()).collect();
    Ok(format!("single-character blocks bit-identical; strategies ran: {}", labels.join(", ")))
}

fn config_suite() -> Verdict {
    let o = metatag(&["train", "--print-config"]);
    if !o.status.success() {
        return Err("print-config failed".into());
    }
    let printed = String::from_utf8_lossy(&o.stdout).into_owned();
    let golden = fs::read_to_string(golden_config()).map_err(|e| e.to_string())?;
    if printed != golden {
        return Err("printed configuration differs from the golden file".into());
    }
    let c: RunConfig = toml::from_str(&printed).map_err(|e| e.to_string())?;
    let t = &c.training;
    let m = &t.model;
    let d = &t.dropout;
    let checks = [
        ("learning rate", t.adam.learning_rate == 0.002),
        ("decay", t.adam.decay == 0.999994),
        ("epsilon", t.adam.epsilon == 1e-8),
        ("betas", t.adam.beta1 == 0.9 && t.adam.beta2 == 0.999),
        ("layers", (m.char_lstm_layers, m.word_lstm_layers, m.meta_lstm_layers) == (3, 3, 1)),
        ("sizes", [m.char_lstm_size, m.word_lstm_size, m.meta_lstm_size, m.mlp_size] == [400; 4]),
        (
            "dropout",
            [d.lstm, d.mlp, d.word_embeddings, d.char_embeddings] == [0.33, 0.33, 0.33, 0.05],
        ),
        ("activation", printed.contains("mlp_activation = \"elu\"")),
        (
            "init",
            printed.contains("word_embeddings = \"zero\"")
                && printed.contains("char_embeddings = \"gaussian\"")
                && printed.contains("mlp = \"gaussian\""),
        ),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(format!("{name} differs from the published table")),
        None => Ok(format!("golden file matches; {} field groups checked", checks.len())),
    }
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, budget: Duration, elapsed: Duration, verdict: Verdict) {
    let within = elapsed <= budget;
    let (ok, detail) = match verdict {
        Ok(d) => (within, d),
        Err(d) => (false, d),
    };
    let timing = format!("{:.1}s, budget {}s", elapsed.as_secs_f64(), budget.as_secs());
    let over = if within { "" } else { " OVER BUDGET" };
    println!("[{}] {id:>2} {name}: {detail} ({timing}){over}", if ok { "PASS" } else { "FAIL" });
    results.push(ok);
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    let mut results = Vec::new();
    let secs = Duration::from_secs;

    let (v, t) = timed(gradient_suite);
    report(&mut results, 1, "gradient check", secs(120), t, v);
    let (v, t) = timed(isolation_suite);
    report(&mut results, 2, "meta isolation", secs(10), t, v);
    let (v, t) = timed(overfit_suite);
    report(&mut results, 3, "overfit", secs(300), t, v);
    let (v, t) = timed(context_suite);
    report(&mut results, 4, "context contrast", secs(1800), t, v);
    let ((meta, opt), t) = timed(complementary_suites);
    report(&mut results, 5, "meta combination", secs(1800), t, meta);
    report(&mut results, 6, "separate vs joint", secs(3600), t, opt);
    let (v, t) = timed(scorer_suite);
    report(&mut results, 7, "scorer equivalence", secs(1), t, v);
    let (v, t) = timed(determinism_suite);
    report(&mut results, 8, "determinism", secs(600), t, v);
    let (v, t) = timed(gather_suite);
    report(&mut results, 9, "gather degeneracy", secs(300), t, v);
    let (v, t) = timed(config_suite);
    report(&mut results, 10, "config fidelity", secs(1), t, v);

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed < results.len() && std::env::var_os("METATAG_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
