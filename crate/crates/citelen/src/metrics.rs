//! Evaluation: ROUGE-1/2/L F1, length-regression MAE, control variance,
//! and the signed length-difference histogram.

use crate::corpus::Corpus;
use crate::hist::{bin_signed, HistogramBin};
use crate::model::GenerationResult;
use crate::scalar::Real;
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("n-gram order must be >= 1")]
    BadGramOrder,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("results/references mismatch: {0}")]
    Mismatch(String),
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<R> {
    pub precision: R,
    pub recall: R,
    pub f1: R,
}

impl<R: Real> Prf<R> {
    fn from_pr(precision: R, recall: R) -> Self {
        let f1 = if precision + recall > R::zero() {
            R::from_f64_c(2.0) * precision * recall / (precision + recall)
        } else {
            R::zero()
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn zero() -> Self {
        Self {
            precision: R::zero(),
            recall: R::zero(),
            f1: R::zero(),
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap precision/recall/F1.
pub fn rouge_n<R: Real>(
    candidate: &[String],
    reference: &[String],
    n: usize,
) -> Result<Prf<R>, MetricsError> {
    if n < 1 {
        return Err(MetricsError::BadGramOrder);
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refc.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return Ok(Prf::zero());
    }
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
        .sum();
    let precision = R::from_usize_c(overlap) / R::from_usize_c(cand_total);
    let recall = R::from_usize_c(overlap) / R::from_usize_c(ref_total);
    Ok(Prf::from_pr(precision, recall))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence precision/recall/F1.
pub fn rouge_l<R: Real>(candidate: &[String], reference: &[String]) -> Prf<R> {
    if candidate.is_empty() || reference.is_empty() {
        return Prf::zero();
    }
    let l = lcs_len(candidate, reference);
    let precision = R::from_usize_c(l) / R::from_usize_c(candidate.len());
    let recall = R::from_usize_c(l) / R::from_usize_c(reference.len());
    Prf::from_pr(precision, recall)
}

/// Mean absolute error between predicted and true lengths.
pub fn mae<R: Real>(pairs: &[(R, R)]) -> Result<R, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("mae pairs"));
    }
    let sum: R = pairs.iter().map(|&(p, t)| (p - t).abs()).sum();
    Ok(sum / R::from_usize_c(pairs.len()))
}

/// `0.001 * mean(|generated - desired|^2)` over (generated, desired) pairs.
pub fn control_variance<R: Real>(pairs: &[(usize, usize)]) -> Result<R, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("control variance pairs"));
    }
    let sum: R = pairs
        .iter()
        .map(|&(l, len)| {
            let d = R::from_usize_c(l.max(len)) - R::from_usize_c(l.min(len));
            d * d
        })
        .sum();
    Ok(R::from_f64_c(0.001) * sum / R::from_usize_c(pairs.len()))
}

/// Histogram of signed `generated - target` length differences.
pub fn length_diff_histogram(
    pairs: &[(usize, usize)],
    bin_width: u32,
) -> Result<Vec<HistogramBin>, MetricsError> {
    if bin_width < 1 {
        return Err(MetricsError::Empty("bin_width"));
    }
    let diffs: Vec<i64> = pairs.iter().map(|&(g, t)| g as i64 - t as i64).collect();
    Ok(bin_signed(&diffs, bin_width))
}

/// Corpus-level evaluation of one system run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    /// MAE of the length regressor; absent when the run carried no
    /// predicted lengths (oracle/heuristic control).
    pub mae: Option<f64>,
    pub control_variance: f64,
    pub n: usize,
    pub length_diff_histogram: Vec<HistogramBin>,
}

/// Score generated results against their reference corpus. Results must
/// align 1:1 with references by `example_id`.
pub fn evaluate_run(
    results: &[GenerationResult],
    references: &Corpus,
    vocab: &Vocab,
    bin_width: u32,
) -> Result<MetricsReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty("results"));
    }
    let by_id: HashMap<&str, &GenerationResult> =
        results.iter().map(|r| (r.example_id.as_str(), r)).collect();
    if by_id.len() != results.len() {
        return Err(MetricsError::Mismatch(
            "duplicate example_id in results".into(),
        ));
    }
    if results.len() != references.examples.len() {
        return Err(MetricsError::Mismatch(format!(
            "{} results vs {} references",
            results.len(),
            references.examples.len()
        )));
    }

    let mut r1 = 0.0;
    let mut r2 = 0.0;
    let mut rl = 0.0;
    let mut mae_pairs: Vec<(f64, f64)> = Vec::new();
    let mut control_pairs = Vec::new();
    let mut diff_pairs = Vec::new();
    for reference in &references.examples {
        let result = by_id.get(reference.example_id.as_str()).ok_or_else(|| {
            MetricsError::Mismatch(format!("no result for example {}", reference.example_id))
        })?;
        let cand = crate::text::tokenize(&result.text);
        let refs = crate::text::tokenize(&reference.target_span);
        r1 += rouge_n::<f64>(&cand, &refs, 1)?.f1;
        r2 += rouge_n::<f64>(&cand, &refs, 2)?.f1;
        rl += rouge_l::<f64>(&cand, &refs).f1;
        let true_len = crate::corpus::target_length(reference, vocab)?;
        if let Some(pred) = result.predicted_len {
            mae_pairs.push((pred, true_len as f64));
        }
        control_pairs.push((result.generated_len, result.desired_len));
        diff_pairs.push((result.generated_len, true_len));
    }
    let n = references.examples.len();
    Ok(MetricsReport {
        rouge1_f: r1 / n as f64,
        rouge2_f: r2 / n as f64,
        rouge_l_f: rl / n as f64,
        mae: if mae_pairs.is_empty() {
            None
        } else {
            Some(mae(&mae_pairs)?)
        },
        control_variance: control_variance(&control_pairs)?,
        n,
        length_diff_histogram: length_diff_histogram(&diff_pairs, bin_width)?,
    })
}

impl MetricsReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("serializable report");
        std::fs::write(path, text).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Histogram as `bin_lower,bin_upper,count` CSV.
    pub fn save_histogram_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let io_err = |source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        writeln!(out, "bin_lower,bin_upper,count").map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for b in &self.length_diff_histogram {
            writeln!(out, "{},{},{}", b.lower, b.upper, b.count).map_err(|source| {
                MetricsError::Io {
                    path: path.display().to_string(),
                    source,
                }
            })?;
        }
        Ok(())
    }
}
