//! Training runs shared by the commands and the ablation harness.

use std::path::Path;

use metatag_core::data::{build_vocabs, dev_split, load_pretrained, read_conllu, Sentence};
use metatag_core::encoders::GatherStrategy;
use metatag_core::eval::{AblationRow, ComponentRuns};
use metatag_core::model::{Part, TaggerModel};
use metatag_core::synthetic;
use metatag_core::training::{accuracy, train, CharModel, Components, EpochLog, Optimization, TrainConfig, TrainOutcome};
use metatag_core::{Error, Result};

use crate::config::RunConfig;

/// Training and development sentences.
#[derive(Debug, Clone)]
pub struct Corpora {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
}

impl Corpora {
    /// Reads the configured files, splitting a dev set off the training
    /// data when no dev file is given.
    pub fn load(run: &RunConfig) -> Result<Self> {
        let train_path = run
            .paths
            .train
            .as_ref()
            .ok_or_else(|| Error::Config("no training corpus (paths.train or --train)".into()))?;
        let train = read_conllu(train_path)?;
        match &run.paths.dev {
            Some(dev) => Ok(Corpora {
                train,
                dev: read_conllu(dev)?,
            }),
            None => {
                let (train, dev) = dev_split(&train, run.training.dev_fraction, run.training.seed)?;
                Ok(Corpora { train, dev })
            }
        }
    }
}

/// Result of one training run: the outcome and the dev accuracy of the
/// best checkpoint's char, word and meta models.
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub accuracies: [f64; 3],
}

pub fn train_on(config: &TrainConfig, corpora: &Corpora, pretrained: Option<&Path>, on_epoch: impl FnMut(&EpochLog)) -> Result<RunResult> {
    let vocabs = build_vocabs(&corpora.train, config.task, config.min_count, config.lowercase_words)?;
    let matrix = match pretrained {
        Some(p) => Some(load_pretrained(p, &vocabs.words, config.pretrained_lowercase_fallback)?.matrix),
        None => None,
    };
    let train_data = vocabs.encode_all(&corpora.train)?;
    let dev_data = vocabs.encode_all(&corpora.dev)?;
    let model = TaggerModel::new(config.clone(), vocabs, matrix)?;
    let outcome = train(model, &train_data, &dev_data, on_epoch)?;
    let m = &outcome.checkpoint.model;
    let mut accuracies = [0.0; 3];
    for (a, part) in accuracies.iter_mut().zip(Part::ALL) {
        *a = accuracy(m, &dev_data, part)?;
    }
    Ok(RunResult { outcome, accuracies })
}

/// The ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    /// The four two-output gather strategies, character model alone.
    Gather,
    /// Sentence-level against token-level character model, meta accuracy.
    Context,
    /// Separate against joint optimization, meta accuracy.
    Optimization,
    /// Character, word and meta accuracy of one model.
    Components,
}

/// Built-in synthetic corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Language {
    /// Tags decided by the previous token's suffix.
    Neighbour,
    /// Suffix rules plus lexical exceptions.
    Complementary,
}

pub fn synthetic_corpora(language: Language, seed: u64, train: usize, dev: usize) -> Corpora {
    let c = match language {
        Language::Neighbour => synthetic::neighbour_suffix_language(seed, train, dev),
        Language::Complementary => synthetic::complementary_language(seed, train, dev),
    };
    Corpora { train: c.train, dev: c.dev }
}

/// The configurations compared along `axis`, with their labels and the
/// model whose accuracy is reported.
pub fn axis_variants(axis: Axis, base: &TrainConfig) -> Vec<(String, TrainConfig, Part)> {
    match axis {
        Axis::Gather => GatherStrategy::ablation_set()
            .into_iter()
            .map(|g| {
                let mut c = base.clone();
                c.model.char_model = CharModel::Sentence;
                c.components = Components::CharOnly;
                c.optimization = Optimization::Separate;
                c.model.gather = g.clone();
                (g.to_string(), c, Part::Char)
            })
            .collect(),
        Axis::Context => [CharModel::Sentence, CharModel::Token]
            .into_iter()
            .map(|m| {
                let mut c = base.clone();
                c.model.char_model = m;
                (m.to_string(), c, Part::Meta)
            })
            .collect(),
        Axis::Optimization => [Optimization::Separate, Optimization::Joint]
            .into_iter()
            .map(|o| {
                let mut c = base.clone();
                c.optimization = o;
                c.components = Components::All;
                (o.to_string(), c, Part::Meta)
            })
            .collect(),
        Axis::Components => {
            let mut c = base.clone();
            c.components = Components::All;
            vec![("all".to_string(), c, Part::Meta)]
        }
    }
}

/// Output of an ablation: one row per (configuration, seed), plus the
/// per-model runs for the components axis.
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub components: Option<ComponentRuns>,
}

/// Runs every variant of `axis` for each seed in `seeds`. Progress lines go
/// to `progress`.
pub fn ablate(axis: Axis, base: &TrainConfig, corpora: &Corpora, dev_label: &str, seeds: &[u64], mut progress: impl FnMut(&str)) -> Result<Ablation> {
    let mut rows = Vec::new();
    let mut runs = ComponentRuns {
        dev_set: dev_label.to_string(),
        char: vec![],
        word: vec![],
        meta: vec![],
    };
    for (label, config, part) in axis_variants(axis, base) {
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            let r = train_on(&c, corpora, None, |_| {})?;
            if axis == Axis::Components {
                for (p, acc) in Part::ALL.iter().zip(r.accuracies) {
                    rows.push(AblationRow {
                        config: p.name().to_string(),
                        seed,
                        task: c.task,
                        accuracy: acc,
                    });
                }
                runs.char.push(r.accuracies[0]);
                runs.word.push(r.accuracies[1]);
                runs.meta.push(r.accuracies[2]);
            } else {
                let k = Part::ALL.iter().position(|&p| p == part).expect("known part");
                rows.push(AblationRow {
                    config: label.clone(),
                    seed,
                    task: c.task,
                    accuracy: r.accuracies[k],
                });
            }
            progress(&format!(
                "{label} seed={seed} char={:.4} word={:.4} meta={:.4}",
                r.accuracies[0], r.accuracies[1], r.accuracies[2]
            ));
        }
    }
    Ok(Ablation {
        rows,
        components: (axis == Axis::Components).then_some(runs),
    })
}
