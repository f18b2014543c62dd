//! Small trainable encoder-decoder with a CLS length-regression head and
//! a length-difference positional encoding on the decoder side.
//!
//! Forward passes build explicit activation caches; backward passes are
//! hand-derived and cross-checked against finite differences in the test
//! suite, so training never depends on an external autodiff framework.

mod checkpoint;
mod generate;
mod layers;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use generate::{
    generate, generate_from_hidden, predict_and_generate, DecodeMode, GenerationResult,
};
pub use layers::Phase;
pub use net::{
    decode_train, decoder_backward, encode, encode_for_length, encoder_backward, len_head_backward,
    predict_length, DecPass, EncPass, LenPass,
};
pub use params::{grad_buffer, Adam, EncoderStack, ModelParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("d_model must be even, got {0}")]
    OddDimension(usize),
    #[error("d_model {d} not divisible by n_heads {heads}")]
    HeadMismatch { d: usize, heads: usize },
    #[error("dimension must be positive: {0}")]
    ZeroDimension(&'static str),
    #[error("dropout must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("input length {len} exceeds max_src_len {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("target length {len} exceeds max_tgt_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("control length must be >= 1, got {0}")]
    BadControlLength(i64),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("token id {id} out of range for vocab of {vocab}")]
    BadToken { id: usize, vocab: usize },
}

/// Architecture hyperparameters. `d_model` must be even (the decoder's
/// positional encoding interleaves sine/cosine pairs) and divisible by
/// `n_heads`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 1,
            n_heads: 4,
            ffn_dim: 64,
            vocab_size: 384,
            max_src_len: 96,
            max_tgt_len: 64,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 {
            return Err(ModelError::ZeroDimension("d_model"));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(ModelError::OddDimension(self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::HeadMismatch {
                d: self.d_model,
                heads: self.n_heads,
            });
        }
        if self.n_layers == 0 {
            return Err(ModelError::ZeroDimension("n_layers"));
        }
        if self.ffn_dim == 0 {
            return Err(ModelError::ZeroDimension("ffn_dim"));
        }
        if self.vocab_size < crate::vocab::Vocab::reserved_len() {
            return Err(ModelError::ZeroDimension("vocab_size"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadDropout(self.dropout));
        }
        Ok(())
    }
}
