#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metatag_core::data::Task;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/default_config.toml")
}

/// Gold/pred fixture pairs with their task and hand-counted (correct, total).
pub const SCORER_FIXTURES: [(&str, Task, usize, usize); 5] = [
    ("scorer1", Task::Xpos, 3, 4),
    ("scorer2", Task::Feats, 2, 3),
    ("scorer3", Task::Upos, 3, 4),
    ("scorer4", Task::Upos, 4, 6),
    ("scorer5", Task::Feats, 2, 3),
];

fn column(task: Task) -> usize {
    match task {
        Task::Upos => 3,
        Task::Xpos => 4,
        Task::Feats => 5,
    }
}

fn canonical(raw: &str, task: Task) -> String {
    if task != Task::Feats || raw == "_" {
        return raw.to_string();
    }
    let mut pairs: Vec<&str> = raw.split('|').collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs.join("|")
}

/// Line-by-line count of matching tags over word lines only, written
/// without the library parser.
pub fn brute_force_count(gold: &str, pred: &str, task: Task) -> (usize, usize) {
    let words = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.split('\t').collect::<Vec<_>>())
            .filter(|c| !c[0].contains('-') && !c[0].contains('.'))
            .map(|c| canonical(c[column(task)], task))
            .collect()
    };
    let (g, p) = (words(gold), words(pred));
    assert_eq!(g.len(), p.len(), "fixture sides differ in length");
    (g.iter().zip(&p).filter(|(a, b)| a == b).count(), g.len())
}

pub fn metatag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metatag"))
        .args(args)
        .env_remove("METATAG_SEED")
        .output()
        .expect("binary runs")
}
