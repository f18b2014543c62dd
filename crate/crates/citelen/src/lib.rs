//! Length-predicted and length-controlled citation text generation.
//!
//! The crate covers the full desk-scale pipeline: corpus handling and
//! synthesis, heuristic length estimators, a small trainable
//! encoder-decoder whose decoder is steered by a length-difference
//! positional encoding, the multitask/scheduled-sampling/pipeline
//! training strategies, and the evaluation metrics (ROUGE, MAE,
//! control variance, length-difference histograms).
//!
//! All numeric kernels are generic over the scalar type via [`scalar::Real`];
//! [`Scalar`] is the concrete precision used by the CLI and the test suite.

pub mod corpus;
pub mod heuristics;
pub mod hist;
pub mod ldpe;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod text;
pub mod training;
pub mod vocab;

pub use corpus::{CitationExample, CitationType, Corpus, LengthStats, Split};
pub use heuristics::{EstimatorKind, LengthEstimator};
pub use metrics::MetricsReport;
pub use model::{GenerationResult, ModelConfig, ModelParams};
pub use scalar::Real;
pub use synth::SynthProfile;
pub use training::{Strategy, TrainConfig, TrainLog};
pub use vocab::Vocab;

/// Default scalar precision for the shipped binaries and tests.
pub type Scalar = f64;

/// Single-precision alias for memory-constrained experiments.
pub type Scalar32 = f32;
