use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} requires a non-empty sequence")]
    EmptySequence(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("embedding file line {line}: expected dimension {expected}, found {found}")]
    EmbeddingDimension { line: usize, expected: usize, found: usize },
    #[error("malformed feature pair {0:?} (expected Name=Value)")]
    MalformedFeature(String),
    #[error("empty token form")]
    EmptyForm,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("incompatible checkpoint version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
