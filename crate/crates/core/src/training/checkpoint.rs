//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "METATAG\0"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen     {config, vocabs, best_dev_accuracy, best_epoch, params: [{name, shape}]}
//! values   f64 * N  parameter values in manifest order
//! digest   32 bytes SHA-256 of everything above
//! ```
//!
//! Loading rebuilds the model from the stored config and vocabularies and
//! then checks the manifest against the rebuilt parameter layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::model::TaggerModel;

use super::config::TrainConfig;

pub const MAGIC: &[u8; 8] = b"METATAG\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// The best model found by training, with its dev score.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TaggerModel,
    pub best_dev_accuracy: f64,
    /// 0 means the untrained model was never beaten.
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocabs: Vocabs,
    best_dev_accuracy: f64,
    best_epoch: usize,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

fn manifest(model: &TaggerModel) -> Vec<ManifestEntry> {
    model
        .store
        .iter()
        .map(|(_, p)| ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config.clone(),
            vocabs: self.model.vocabs.clone(),
            best_dev_accuracy: self.best_dev_accuracy,
            best_epoch: self.best_epoch,
            params: manifest(&self.model),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(json.len() + 8 * self.model.store.num_values() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.model.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

        let mut model = TaggerModel::new(header.config, header.vocabs, None).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        if manifest(&model) != header.params {
            return Err(Error::CheckpointMismatch(
                "parameter names or shapes differ from the rebuilt model".into(),
            ));
        }
        let values = &body[header_end..];
        if values.len() != 8 * model.store.num_values() {
            return Err(corrupt("parameter data length does not match the manifest"));
        }
        let mut chunks = values.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            for slot in model.store.value_mut(id).data_mut() {
                *slot = chunks.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            model,
            best_dev_accuracy: header.best_dev_accuracy,
            best_epoch: header.best_epoch,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
