//! Pretrained word embeddings in the word2vec/GloVe text format.
//!
//! An optional `count dim` header line is followed by one
//! `token v1 ... vd` line per word, fields separated by single spaces.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::vocab::{Index, UNK_ID};

/// Frozen matrix aligned to the word vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    /// `[vocab, dim]`; rows of words missing from the file are zero.
    pub matrix: Tensor,
    pub dim: usize,
    /// Vocabulary words (the unknown entry excluded) found in the file.
    pub covered: usize,
    /// `covered / (vocab size - 1)`.
    pub coverage: f64,
}

impl PretrainedEmbeddings {
    /// All-zero embeddings for runs without a pretrained file.
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        PretrainedEmbeddings {
            matrix: Tensor::zeros(&[vocab_size, dim]),
            dim,
            covered: 0,
            coverage: 0.0,
        }
    }
}

pub fn load_pretrained(path: impl AsRef<Path>, words: &Index, lowercase_fallback: bool) -> Result<PretrainedEmbeddings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pretrained(BufReader::new(file), words, lowercase_fallback).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_pretrained<R: BufRead>(reader: R, words: &Index, lowercase_fallback: bool) -> Result<PretrainedEmbeddings> {
    // Only keep vectors the vocabulary can use.
    let mut wanted: HashMap<String, ()> = words.items().iter().map(|w| (w.clone(), ())).collect();
    if lowercase_fallback {
        for w in words.items() {
            wanted.insert(w.to_lowercase(), ());
        }
    }

    let mut dim: Option<usize> = None;
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if lineno == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let found = fields.len() - 1;
        let expected = *dim.get_or_insert(found);
        if found != expected || found == 0 {
            return Err(Error::EmbeddingDimension {
                line: lineno,
                expected,
                found,
            });
        }
        let word = fields[0];
        if !wanted.contains_key(word) || vectors.contains_key(word) {
            continue;
        }
        let values = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid number {v:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        vectors.insert(word.to_string(), values);
    }

    let dim = dim.ok_or_else(|| Error::InvalidArgument("embedding file has no vectors".into()))?;
    let mut data = vec![0.0; words.len() * dim];
    let mut covered = 0;
    for (id, w) in words.items().iter().enumerate() {
        if id == UNK_ID {
            continue;
        }
        let v = vectors
            .get(w)
            .or_else(|| lowercase_fallback.then(|| vectors.get(&w.to_lowercase())).flatten());
        if let Some(v) = v {
            data[id * dim..(id + 1) * dim].copy_from_slice(v);
            covered += 1;
        }
    }
    let denom = words.len().saturating_sub(1).max(1);
    Ok(PretrainedEmbeddings {
        matrix: Tensor::matrix(words.len(), dim, data)?,
        dim,
        covered,
        coverage: covered as f64 / denom as f64,
    })
}
