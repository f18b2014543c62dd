//! Self-describing checkpoint container. JSON keeps floats in shortest
//! round-trip form, so save/load reproduces every weight bit-exactly.

use super::params::ModelParams;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const FORMAT_TAG: &str = "citelen-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unrecognized checkpoint tag {0:?}")]
    WrongTag(String),
    #[error("checkpoint was trained against a different vocabulary (fingerprint {found:#x}, expected {expected:#x})")]
    VocabMismatch { found: u64, expected: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<R> {
    pub format: String,
    /// Training strategy that produced these weights.
    pub strategy: String,
    pub vocab_fingerprint: u64,
    pub params: ModelParams<R>,
}

pub fn save_checkpoint<R: Real>(
    params: &ModelParams<R>,
    strategy: &str,
    vocab_fingerprint: u64,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        format: FORMAT_TAG.to_string(),
        strategy: strategy.to_string(),
        vocab_fingerprint,
        params: params.clone(),
    };
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<R>, CheckpointError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint<R> = serde_json::from_str(&text)?;
    if ckpt.format != FORMAT_TAG {
        return Err(CheckpointError::WrongTag(ckpt.format));
    }
    Ok(ckpt)
}

impl<R: Real> Checkpoint<R> {
    pub fn check_vocab(&self, fingerprint: u64) -> Result<(), CheckpointError> {
        if self.vocab_fingerprint != fingerprint {
            return Err(CheckpointError::VocabMismatch {
                found: self.vocab_fingerprint,
                expected: fingerprint,
            });
        }
        Ok(())
    }
}
