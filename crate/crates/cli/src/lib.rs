//! The `metatag` command line: train, tag, eval, grid, ablate and synth.

pub mod config;
pub mod experiment;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use toml::Value;

use metatag_core::data::{read_conllu, write_conllu, Task};
use metatag_core::encoders::GatherStrategy;
use metatag_core::eval::{ablation_csv, ablation_report, format_components_table, format_summary_table, paired_t, score, AblationRow};
use metatag_core::training::{selection_part, CharModel, Checkpoint, Optimization};
use metatag_core::{Error, Result};

use config::{resolve, RunConfig, SEED_ENV};
use experiment::{ablate, synthetic_corpora, train_on, Axis, Corpora, Language};

/// Exit status for bad usage: unknown flags, invalid configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for unreadable or inconsistent data.
pub const EXIT_DATA: i32 = 2;

/// Maps an error to the process exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "metatag",
    version,
    about = "Morphosyntactic tagger with a meta-BiLSTM over character and word encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best checkpoint.
    Train(ConfigArgs),
    /// Tag a CoNLL-U file with a trained model.
    Tag(TagArgs),
    /// Score predicted against gold CoNLL-U.
    Eval(EvalArgs),
    /// Train over a grid of character and word LSTM sizes.
    Grid(GridArgs),
    /// Repeat training across seeds along one ablation axis.
    Ablate(AblateArgs),
    /// Write a synthetic corpus as CoNLL-U.
    Synth(SynthArgs),
}

/// Configuration shared by every training command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `training.adam.learning_rate=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Random seed (default from METATAG_SEED, then 1).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub optimization: Option<Optimization>,
    #[arg(long)]
    pub char_model: Option<CharModel>,
    /// Character outputs to gather, e.g. `f-last+b-first`.
    #[arg(long)]
    pub gather: Option<GatherStrategy>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Set every LSTM, MLP and embedding size at once.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut flags: Vec<(&str, Value)> = Vec::new();
        let int = |v: usize| Value::Integer(v as i64);
        if let Some(s) = self.size {
            for key in [
                "training.model.char_lstm_size",
                "training.model.word_lstm_size",
                "training.model.meta_lstm_size",
                "training.model.mlp_size",
                "training.model.char_embedding_dim",
                "training.model.word_embedding_dim",
            ] {
                flags.push((key, int(s)));
            }
        }
        if let Some(s) = self.seed {
            flags.push(("training.seed", Value::Integer(s as i64)));
        }
        if let Some(t) = self.task {
            flags.push(("training.task", Value::String(t.to_string())));
        }
        if let Some(o) = self.optimization {
            flags.push(("training.optimization", Value::String(o.to_string())));
        }
        if let Some(m) = self.char_model {
            flags.push(("training.model.char_model", Value::String(m.to_string())));
        }
        if let Some(g) = &self.gather {
            let points = Value::try_from(g.clone()).expect("gather serialises");
            flags.push(("training.model.gather", points));
        }
        for (key, v) in [
            ("training.max_epochs", self.max_epochs),
            ("training.batch_size", self.batch_size),
            ("training.patience", self.patience),
        ] {
            if let Some(v) = v {
                flags.push((key, int(v)));
            }
        }
        for (key, p) in [
            ("paths.train", &self.train),
            ("paths.dev", &self.dev),
            ("paths.pretrained", &self.pretrained),
            ("paths.checkpoint", &self.checkpoint),
            ("paths.log", &self.log),
        ] {
            if let Some(p) = p {
                flags.push((key, path_value(p)));
            }
        }
        let env_seed = std::env::var(SEED_ENV).ok();
        resolve(self.config.as_deref(), env_seed.as_deref(), &self.set, &flags)
    }
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value = "xpos")]
    pub task: Task,
    /// Append a `config,seed,task,accuracy` row to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Value of the CSV `config` column.
    #[arg(long, default_value = "eval")]
    pub label: String,
    /// Value of the CSV `seed` column.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// An inclusive `start:end:step` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl std::str::FromStr for SizeRange {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.parse::<usize>().map_err(|_| format!("{p:?} is not a size")))
            .collect::<std::result::Result<_, _>>()?;
        let r = match nums[..] {
            [v] => SizeRange { start: v, end: v, step: 1 },
            [start, end, step] => SizeRange { start, end, step },
            _ => return Err("expected START:END:STEP or a single size".into()),
        };
        if r.start == 0 || r.step == 0 || r.end < r.start {
            return Err("need 0 < START <= END and STEP > 0".into());
        }
        Ok(r)
    }
}

impl SizeRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step).collect()
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Character LSTM sizes.
    #[arg(long, default_value = "200:500:50")]
    pub char_sizes: SizeRange,
    /// Word LSTM sizes.
    #[arg(long, default_value = "200:500:50")]
    pub word_sizes: SizeRange,
    /// Epochs per cell unless `--max-epochs` is given.
    #[arg(long, default_value_t = 10)]
    pub cell_epochs: usize,
    /// CSV output (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Number of restarts; seeds run from the configured seed upwards.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Use a built-in synthetic corpus instead of `--train`/`--dev`.
    #[arg(long, value_enum)]
    pub synthetic: Option<Language>,
    #[arg(long, default_value_t = 1)]
    pub corpus_seed: u64,
    #[arg(long, default_value_t = 200)]
    pub train_sentences: usize,
    #[arg(long, default_value_t = 100)]
    pub dev_sentences: usize,
    /// CSV output of every run (`config,seed,task,accuracy`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub language: Language,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub train_sentences: usize,
    #[arg(long, default_value_t = 100)]
    pub dev_sentences: usize,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub dev_out: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args, out),
        Command::Tag(args) => cmd_tag(&args, out),
        Command::Eval(args) => cmd_eval(&args, out),
        Command::Grid(args) => cmd_grid(&args, out),
        Command::Ablate(args) => cmd_ablate(&args, out),
        Command::Synth(args) => cmd_synth(&args, out),
    }
}

fn print_config(run: &RunConfig, out: &mut dyn Write) -> Result<()> {
    out.write_all(run.to_toml().as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(io_err(Path::new("<stdout>")))
}

pub fn cmd_train(args: &ConfigArgs, out: &mut dyn Write) -> Result<()> {
    let run = args.resolve()?;
    if args.print_config {
        return print_config(&run, out);
    }
    let checkpoint = run
        .paths
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("no checkpoint path (paths.checkpoint or --checkpoint)".into()))?;
    let corpora = Corpora::load(&run)?;
    let mut log_file = match &run.paths.log {
        Some(p) => Some((fs::File::create(p).map_err(io_err(p))?, p.clone())),
        None => None,
    };
    let mut log_error = None;
    let result = train_on(&run.training, &corpora, run.paths.pretrained.as_deref(), |record| {
        eprintln!("{record}");
        if let Some((f, p)) = &mut log_file {
            if let Err(e) = writeln!(f, "{record}") {
                log_error.get_or_insert(Error::Io { path: p.clone(), source: e });
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    let cp = &result.outcome.checkpoint;
    cp.save(&checkpoint)?;
    say(
        out,
        &format!(
            "best epoch {} dev accuracy {:.6} (char {:.6} word {:.6} meta {:.6}); checkpoint {}",
            cp.best_epoch,
            cp.best_dev_accuracy,
            result.accuracies[0],
            result.accuracies[1],
            result.accuracies[2],
            checkpoint.display()
        ),
    )
}

pub fn cmd_tag(args: &TagArgs, out: &mut dyn Write) -> Result<()> {
    let cp = Checkpoint::load(&args.checkpoint)?;
    let model = &cp.model;
    let part = selection_part(&model.config);
    let mut sentences = read_conllu(&args.input)?;
    for s in &mut sentences {
        let enc = model.vocabs.encode(s)?;
        let tags = model.tag_names(&enc, part)?;
        s.set_tags(model.vocabs.task, &tags)?;
    }
    write_file(&args.output, &write_conllu(&sentences))?;
    say(out, &format!("tagged {} sentences -> {}", sentences.len(), args.output.display()))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let gold = read_conllu(&args.gold)?;
    let pred = read_conllu(&args.pred)?;
    let report = score(&gold, &pred, args.task)?;
    say(out, &report.to_string())?;
    for (g, p, c) in report.top_errors(5) {
        say(out, &format!("  {c:>6}  {g} -> {p}"))?;
    }
    if let Some(path) = &args.csv {
        let row = AblationRow {
            config: args.label.clone(),
            seed: args.seed,
            task: args.task,
            accuracy: report.accuracy,
        };
        let text = ablation_csv(&[row])?;
        let existing = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let body = if existing {
            text.lines().skip(1).map(|l| format!("{l}\n")).collect()
        } else {
            text
        };
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        f.write_all(body.as_bytes()).map_err(io_err(path))?;
    }
    Ok(())
}

/// One grid cell's result; `accuracy` is `None` when training failed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub char_size: usize,
    pub word_size: usize,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("char_size,word_size,dev_accuracy,error\n");
    for c in cells {
        let acc = c.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let err = c.error.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
        s.push_str(&format!("{},{},{acc},{err}\n", c.char_size, c.word_size));
    }
    s
}

pub fn cmd_grid(args: &GridArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = args.config.resolve()?;
    if args.config.max_epochs.is_none() {
        run.training.max_epochs = args.cell_epochs;
    }
    if args.config.print_config {
        return print_config(&run, out);
    }
    let corpora = Corpora::load(&run)?;
    let mut cells = Vec::new();
    for &c in &args.char_sizes.values() {
        for &w in &args.word_sizes.values() {
            let mut cfg = run.training.clone();
            cfg.model.char_lstm_size = c;
            cfg.model.word_lstm_size = w;
            let r = train_on(&cfg, &corpora, run.paths.pretrained.as_deref(), |_| {});
            let cell = match r {
                Ok(r) => GridCell {
                    char_size: c,
                    word_size: w,
                    accuracy: Some(r.outcome.checkpoint.best_dev_accuracy),
                    error: None,
                },
                Err(e) => GridCell {
                    char_size: c,
                    word_size: w,
                    accuracy: None,
                    error: Some(e.to_string()),
                },
            };
            eprintln!(
                "char={c} word={w} {}",
                cell.accuracy
                    .map_or_else(|| cell.error.clone().unwrap_or_default(), |a| format!("{a:.6}"))
            );
            cells.push(cell);
        }
    }
    cells.sort_by_key(|c| (c.char_size, c.word_size));
    let csv = grid_csv(&cells);
    match &args.output {
        Some(p) => write_file(p, &csv),
        None => out.write_all(csv.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let run = args.config.resolve()?;
    if args.config.print_config {
        return print_config(&run, out);
    }
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let (corpora, label) = match args.synthetic {
        Some(lang) => (
            synthetic_corpora(lang, args.corpus_seed, args.train_sentences, args.dev_sentences),
            format!("{lang:?}").to_lowercase(),
        ),
        None => {
            let c = Corpora::load(&run)?;
            let label = run
                .paths
                .dev
                .as_ref()
                .or(run.paths.train.as_ref())
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dev".into());
            (c, label)
        }
    };
    let base = run.training.seed;
    let seeds: Vec<u64> = (base..base + args.seeds).collect();
    let result = ablate(args.axis, &run.training, &corpora, &label, &seeds, |line| eprintln!("{line}"))?;
    if let Some(p) = &args.output {
        write_file(p, &ablation_csv(&result.rows)?)?;
    }
    let summary = ablation_report(&result.rows);
    match &result.components {
        Some(runs) => say(out, format_components_table(std::slice::from_ref(runs)).trim_end())?,
        None => say(out, format_summary_table(&summary).trim_end())?,
    }
    if args.axis == Axis::Optimization || args.axis == Axis::Context {
        let pick = |name: &str| -> Vec<f64> { result.rows.iter().filter(|r| r.config == name).map(|r| r.accuracy).collect() };
        let names: Vec<&String> = summary.iter().map(|(c, _)| c).collect();
        if let [a, b] = names[..] {
            if let Ok(t) = paired_t(&pick(a), &pick(b)) {
                say(out, &format!("paired t ({a} - {b}): t={:.4} df={} p={:.4}", t.t, t.df, t.p))?;
            }
        }
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let c = synthetic_corpora(args.language, args.seed, args.train_sentences, args.dev_sentences);
    write_file(&args.train_out, &write_conllu(&c.train))?;
    write_file(&args.dev_out, &write_conllu(&c.dev))?;
    say(out, &format!("wrote {} training and {} dev sentences", c.train.len(), c.dev.len()))
}
