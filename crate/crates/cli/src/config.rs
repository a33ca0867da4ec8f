//! Run configuration: training hyperparameters plus file paths, read from
//! a TOML file and patched by command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, `METATAG_SEED`, the config
//! file, `--set key=value` overrides, dedicated flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use metatag_core::training::TrainConfig;
use metatag_core::{Error, Result};

pub const SEED_ENV: &str = "METATAG_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    /// Held out from `train` with `training.dev_fraction` when absent.
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Training log, one line per epoch.
    pub log: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub training: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

fn merge(base: &mut Table, patch: Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one item");
    let mut table = root;
    for p in parents {
        table = match table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key}: {p} is not a section"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a plain string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Builds the effective configuration.
///
/// `file` is an optional TOML config, `sets` are raw `key=value` strings
/// and `flags` are already-typed overrides from dedicated options.
pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, sets: &[String], flags: &[(&str, Value)]) -> Result<RunConfig> {
    let mut root = Table::try_from(RunConfig::default()).expect("defaults serialise");
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        set_path(&mut root, "training.seed", Value::Integer(seed as i64))?;
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let table: Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut root, table);
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    for (k, v) in flags {
        set_path(&mut root, k, v.clone())?;
    }
    let config: RunConfig = Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.training.validate()?;
    Ok(config)
}
