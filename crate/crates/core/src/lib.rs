//! Morphosyntactic tagging with context-sensitive character and word
//! encoders combined by a meta-BiLSTM.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod meta;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
