//! Tagging accuracy under gold segmentation, and ablation summaries.
//!
//! With identical tokenisation on both sides the shared-task F1 reduces to
//! token accuracy, which is what [`score`] computes.

use std::collections::BTreeMap;
use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{morph_bundle_tag, Sentence, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Counts of `(gold, predicted)` tag pairs.
    pub confusion: BTreeMap<(String, String), usize>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "task={} tokens={} correct={} accuracy={:.6}",
            self.task, self.total, self.correct, self.accuracy
        )
    }
}

impl EvalReport {
    /// The `n` most frequent errors, most frequent first.
    pub fn top_errors(&self, n: usize) -> Vec<(&str, &str, usize)> {
        let mut errs: Vec<_> = self
            .confusion
            .iter()
            .filter(|((g, p), _)| g != p)
            .map(|((g, p), &c)| (g.as_str(), p.as_str(), c))
            .collect();
        errs.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));
        errs.truncate(n);
        errs
    }
}

fn column_tag(s: &Sentence, i: usize, task: Task) -> String {
    let raw = &s.tokens[i].columns[task.column()];
    match task {
        // A malformed bundle is compared verbatim.
        Task::Feats => morph_bundle_tag(raw).unwrap_or_else(|_| raw.clone()),
        _ => raw.clone(),
    }
}

/// Token-level exact match of the task column. Both sides must have the
/// same sentences and token counts.
pub fn score(gold: &[Sentence], pred: &[Sentence], task: Task) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!("{} gold sentences but {} predicted", gold.len(), pred.len())));
    }
    let mut confusion = BTreeMap::new();
    let (mut total, mut correct) = (0, 0);
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tokens.len() != p.tokens.len() {
            return Err(Error::Alignment(format!(
                "sentence {}: {} gold tokens but {} predicted",
                k + 1,
                g.tokens.len(),
                p.tokens.len()
            )));
        }
        for i in 0..g.tokens.len() {
            let (gt, pt) = (column_tag(g, i, task), column_tag(p, i, task));
            total += 1;
            if gt == pt {
                correct += 1;
            }
            *confusion.entry((gt, pt)).or_insert(0) += 1;
        }
    }
    Ok(EvalReport {
        task,
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        confusion,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `n - 1` denominator; 0 for a single value.
    pub stdev: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            stdev: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stdev = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { n, mean, stdev }
}

/// One ablation measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: String,
    pub seed: u64,
    pub task: Task,
    pub accuracy: f64,
}

/// Mean and stdev per configuration, in first-appearance order.
pub fn ablation_report(rows: &[AblationRow]) -> Vec<(String, Summary)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.config.as_str()) {
            order.push(r.config.clone());
        }
        groups.entry(&r.config).or_default().push(r.accuracy);
    }
    order
        .into_iter()
        .map(|c| {
            let s = summarize(&groups[c.as_str()]);
            (c, s)
        })
        .collect()
}

/// Machine-readable rows with the header `config,seed,task,accuracy`.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(["config", "seed", "task", "accuracy"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.config.clone(), r.seed.to_string(), r.task.to_string(), format!("{:.6}", r.accuracy)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Human-readable `config | n | mean | stdev` table, accuracies in percent.
pub fn format_summary_table(summary: &[(String, Summary)]) -> String {
    let width = summary.iter().map(|(c, _)| c.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>4}  {:>7}  {:>6}\n", "config", "n", "mean", "stdev");
    for (c, s) in summary {
        out.push_str(&format!("{c:<width$}  {:>4}  {:>7.2}  {:>6.2}\n", s.n, 100.0 * s.mean, 100.0 * s.stdev));
    }
    out
}

/// Character, word and meta accuracies of repeated runs on one dev set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRuns {
    pub dev_set: String,
    pub char: Vec<f64>,
    pub word: Vec<f64>,
    pub meta: Vec<f64>,
}

/// Table with one row per dev set: the number of runs, the mean char, word
/// and meta scores, then their standard deviations (percent).
pub fn format_components_table(runs: &[ComponentRuns]) -> String {
    let width = runs.iter().map(|r| r.dev_set.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6}\n",
        "dev set", "num. exp.", "char", "word", "meta", "char", "word", "meta"
    );
    out.push_str(&format!("{:<width$}  {:>9}  {:^20}  {:^20}\n", "", "", "mean", "stdev"));
    for r in runs {
        let s = [summarize(&r.char), summarize(&r.word), summarize(&r.meta)];
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>6.2} {:>6.2} {:>6.2}  {:>6.2} {:>6.2} {:>6.2}\n",
            r.dev_set,
            r.meta.len(),
            100.0 * s[0].mean,
            100.0 * s[1].mean,
            100.0 * s[2].mean,
            100.0 * s[0].stdev,
            100.0 * s[1].stdev,
            100.0 * s[2].stdev
        ));
    }
    out
}

/// Two-tailed paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs two samples of equal length >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&diffs);
    let df = a.len() - 1;
    let se = s.stdev / (a.len() as f64).sqrt();
    let t = if se == 0.0 {
        if s.mean == 0.0 {
            0.0
        } else {
            s.mean.signum() * f64::INFINITY
        }
    } else {
        s.mean / se
    };
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = if t.is_infinite() { 0.0 } else { 2.0 * (1.0 - dist.cdf(t.abs())) };
    Ok(PairedT { t, df, p })
}
