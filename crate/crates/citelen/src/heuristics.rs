//! Statistical length estimators fitted on a training corpus.
//!
//! Four heuristics (plus the oracle): global average, average partitioned
//! by citation-mark count, average per citing paper, and a random draw
//! from the empirical training length distribution.

use crate::corpus::{target_length, CitationExample, Corpus};
use crate::rng::{self, substream};
use crate::scalar::round_half_up;
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Average,
    CitationMarks,
    CitingPaper,
    Random,
    Oracle,
}

impl std::str::FromStr for EstimatorKind {
    type Err = HeuristicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Self::Average),
            "citation_marks" | "citation-marks" => Ok(Self::CitationMarks),
            "citing_paper" | "citing-paper" => Ok(Self::CitingPaper),
            "random" => Ok(Self::Random),
            "oracle" => Ok(Self::Oracle),
            other => Err(HeuristicsError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum HeuristicsError {
    #[error("cannot fit an estimator on an empty corpus")]
    EmptyCorpus,
    #[error("estimator is not fitted")]
    Unfitted,
    #[error("unknown estimator kind: {0}")]
    UnknownKind(String),
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("estimator file: {0}")]
    Format(#[from] serde_json::Error),
}

/// A fitted heuristic. Only the statistics its kind requires are
/// populated; `global_mean` doubles as the fallback for unseen partitions.
#[derive(Debug, Serialize, Deserialize)]
pub struct LengthEstimator {
    pub kind: EstimatorKind,
    pub global_mean: f64,
    pub by_mark_count: BTreeMap<usize, f64>,
    pub by_paper: BTreeMap<String, f64>,
    pub empirical_lengths: Vec<usize>,
    pub rng_seed: u64,
    /// Position in the random draw stream; advanced atomically so
    /// concurrent callers never reuse a draw.
    #[serde(skip)]
    draw_counter: AtomicU64,
}

impl PartialEq for LengthEstimator {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.global_mean == other.global_mean
            && self.by_mark_count == other.by_mark_count
            && self.by_paper == other.by_paper
            && self.empirical_lengths == other.empirical_lengths
            && self.rng_seed == other.rng_seed
    }
}

/// Number of citation marks carried by an example; duplicates count.
pub fn mark_count(ex: &CitationExample) -> usize {
    ex.citation_marks.len()
}

/// Fit the statistics `kind` needs from the training corpus.
pub fn fit(
    kind: EstimatorKind,
    train: &Corpus,
    vocab: &Vocab,
    seed: u64,
) -> Result<LengthEstimator, HeuristicsError> {
    if train.examples.is_empty() {
        return Err(HeuristicsError::EmptyCorpus);
    }
    let lengths: Vec<usize> = train
        .examples
        .iter()
        .map(|ex| target_length(ex, vocab))
        .collect::<Result<_, _>>()?;
    let global_mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;

    let mut by_mark_count = BTreeMap::new();
    let mut by_paper = BTreeMap::new();
    let mut empirical_lengths = Vec::new();
    match kind {
        EstimatorKind::CitationMarks => {
            let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for (ex, &l) in train.examples.iter().zip(&lengths) {
                let e = sums.entry(mark_count(ex)).or_insert((0.0, 0));
                e.0 += l as f64;
                e.1 += 1;
            }
            by_mark_count = sums
                .into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect();
        }
        EstimatorKind::CitingPaper => {
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for (ex, &l) in train.examples.iter().zip(&lengths) {
                let e = sums.entry(ex.citing_paper_id.clone()).or_insert((0.0, 0));
                e.0 += l as f64;
                e.1 += 1;
            }
            by_paper = sums
                .into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect();
        }
        EstimatorKind::Random => {
            empirical_lengths = lengths;
        }
        EstimatorKind::Average | EstimatorKind::Oracle => {}
    }

    Ok(LengthEstimator {
        kind,
        global_mean,
        by_mark_count,
        by_paper,
        empirical_lengths,
        rng_seed: seed,
        draw_counter: AtomicU64::new(0),
    })
}

impl LengthEstimator {
    /// Desired length for one example, always >= 1 tokens.
    pub fn estimate(&self, ex: &CitationExample) -> Result<usize, HeuristicsError> {
        if self.global_mean <= 0.0 {
            return Err(HeuristicsError::Unfitted);
        }
        let value = match self.kind {
            EstimatorKind::Average => round_half_up(self.global_mean),
            EstimatorKind::CitationMarks => {
                let mean = self
                    .by_mark_count
                    .get(&mark_count(ex))
                    .copied()
                    .unwrap_or(self.global_mean);
                round_half_up(mean)
            }
            EstimatorKind::CitingPaper => {
                let mean = self
                    .by_paper
                    .get(&ex.citing_paper_id)
                    .copied()
                    .unwrap_or(self.global_mean);
                round_half_up(mean)
            }
            EstimatorKind::Random => {
                if self.empirical_lengths.is_empty() {
                    return Err(HeuristicsError::Unfitted);
                }
                let pos = self.draw_counter.fetch_add(1, Ordering::Relaxed);
                let mut rng = substream(self.rng_seed, "heuristic/random", pos);
                self.empirical_lengths[rng::uniform_usize(&mut rng, self.empirical_lengths.len())]
                    as i64
            }
            EstimatorKind::Oracle => crate::text::tokenize(&ex.target_span).len() as i64,
        };
        Ok(value.max(1) as usize)
    }

    /// Rewind the random draw stream (e.g. before replaying a run).
    pub fn reset_draws(&self) {
        self.draw_counter.store(0, Ordering::Relaxed);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeuristicsError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| HeuristicsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HeuristicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HeuristicsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
