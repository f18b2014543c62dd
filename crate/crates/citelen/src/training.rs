//! Training strategies and loss functions.
//!
//! Three ways to marry length prediction with length-controlled
//! generation: joint multitasking on a combined loss, scheduled sampling
//! that anneals from ground-truth to predicted control lengths, and a
//! pipeline that trains the regressor and the generator as disjoint
//! models composed only at inference. Oracle/heuristic control trains the
//! generator on ground-truth lengths alone.

use crate::corpus::{build_model_input, target_length, Corpus, TokenSequence};
use crate::heuristics::EstimatorKind;
use crate::math::{log_sum_exp, Matrix};
use crate::model::{
    decode_train, decoder_backward, encode, encode_for_length, encoder_backward, grad_buffer,
    len_head_backward, predict_length, Adam, ModelConfig, ModelError, ModelParams, Phase,
};
use crate::rng::{self, substream};
use crate::scalar::Real;
use crate::vocab::{Vocab, EOS, PAD};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    VanillaMultitask,
    ScheduledSampling,
    TeacherForcingPipeline,
    OracleControl,
    HeuristicControl,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::VanillaMultitask => "vanilla_multitask",
            Self::ScheduledSampling => "scheduled_sampling",
            Self::TeacherForcingPipeline => "teacher_forcing_pipeline",
            Self::OracleControl => "oracle_control",
            Self::HeuristicControl => "heuristic_control",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla_multitask" => Ok(Self::VanillaMultitask),
            "scheduled_sampling" => Ok(Self::ScheduledSampling),
            "teacher_forcing_pipeline" => Ok(Self::TeacherForcingPipeline),
            "oracle_control" => Ok(Self::OracleControl),
            "heuristic_control" => Ok(Self::HeuristicControl),
            other => Err(TrainError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Generation-loss weight in the combined multitask loss.
    pub lambda_g: f64,
    /// Scheduled sampling: initial ground-truth probability and decay rate.
    pub p0: f64,
    pub k: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Required when strategy is heuristic_control.
    pub heuristic_kind: Option<EstimatorKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::OracleControl,
            lambda_g: 0.3,
            p0: 0.99,
            k: 0.98,
            epochs: 10,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
            heuristic_kind: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda_g) {
            return Err(TrainError::Config(format!(
                "lambda_g {} outside [0, 1]",
                self.lambda_g
            )));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(TrainError::Config(format!("k {} outside (0, 1)", self.k)));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(TrainError::Config(format!("p0 {} outside (0, 1]", self.p0)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::Config(format!(
                "lr {} must be positive",
                self.lr
            )));
        }
        if self.strategy == Strategy::HeuristicControl && self.heuristic_kind.is_none() {
            return Err(TrainError::Config(
                "heuristic_control requires heuristic_kind".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("total_steps must be >= 1")]
    ZeroTotalSteps,
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean token-level cross-entropy; PAD target positions are excluded.
pub fn gen_loss<R: Real>(logits: &Matrix<R>, target: &TokenSequence) -> Result<R, TrainError> {
    if logits.rows != target.len() {
        return Err(TrainError::Shape(format!(
            "{} logit rows vs {} target tokens",
            logits.rows,
            target.len()
        )));
    }
    let mut sum = R::zero();
    let mut count = 0usize;
    for (t, &y) in target.ids.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y >= logits.cols {
            return Err(TrainError::Shape(format!(
                "target id {y} vs vocab {}",
                logits.cols
            )));
        }
        sum += log_sum_exp(logits.row(t)) - logits.get(t, y);
        count += 1;
    }
    if count == 0 {
        return Err(TrainError::EmptyBatch);
    }
    Ok(sum / R::from_usize_c(count))
}

/// Root-mean-square error over (predicted, true-length) pairs.
pub fn len_loss<R: Real>(pairs: &[(R, usize)]) -> Result<R, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let sum: R = pairs
        .iter()
        .map(|&(pred, truth)| {
            let d = pred - R::from_usize_c(truth);
            d * d
        })
        .sum();
    Ok((sum / R::from_usize_c(pairs.len())).sqrt())
}

/// `lambda_g * L_gen + (1 - lambda_g) * L_len`.
pub fn combined_loss<R: Real>(l_gen: R, l_len: R, lambda_g: R) -> Result<R, TrainError> {
    if lambda_g < R::zero() || lambda_g > R::one() {
        return Err(TrainError::Config(format!(
            "lambda_g {lambda_g} outside [0, 1]"
        )));
    }
    Ok(lambda_g * l_gen + (R::one() - lambda_g) * l_len)
}

/// Ground-truth probability `p0 * k^(epoch + (step + 1) / total_steps)`,
/// zero-based epochs.
pub fn sampling_prob(
    p0: f64,
    k: f64,
    epoch: usize,
    step: usize,
    total_steps: usize,
) -> Result<f64, TrainError> {
    if total_steps == 0 {
        return Err(TrainError::ZeroTotalSteps);
    }
    debug_assert!(step < total_steps);
    let exponent = epoch as f64 + (step as f64 + 1.0) / total_steps as f64;
    Ok(p0 * k.powf(exponent))
}

// ---------------------------------------------------------------------------
// Train log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_gen: Option<f64>,
    pub l_len: Option<f64>,
    pub l_all: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,L_gen,L_len,L_all,p\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.step,
                fmt_opt(r.l_gen),
                fmt_opt(r.l_len),
                fmt_opt(r.l_all),
                fmt_opt(r.p)
            ));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|source| TrainError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    /// Epoch-mean of the generation loss, for convergence checks.
    pub fn epoch_mean_gen_loss(&self, epoch: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == epoch)
            .filter_map(|r| r.l_gen)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

// ---------------------------------------------------------------------------
// Batch machinery
// ---------------------------------------------------------------------------

/// A corpus example lowered to token ids. The target carries its closing
/// EOS; `true_len` counts content tokens only.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub src: TokenSequence,
    pub tgt_with_eos: TokenSequence,
    pub true_len: usize,
}

/// Tokenize and assemble every example against the model's limits.
pub fn prepare_examples(
    corpus: &Corpus,
    vocab: &Vocab,
    model_cfg: &ModelConfig,
) -> Result<Vec<PreparedExample>, TrainError> {
    let mut out = Vec::with_capacity(corpus.examples.len());
    for ex in &corpus.examples {
        let src = build_model_input(ex, vocab, model_cfg.max_src_len).seq;
        let _ = target_length(ex, vocab)?;
        let mut tgt = vocab.encode(&ex.target_span);
        if tgt.len() > model_cfg.max_tgt_len - 1 {
            tgt.truncate(model_cfg.max_tgt_len - 1);
        }
        let true_len = tgt.len();
        tgt.push(EOS);
        out.push(PreparedExample {
            src,
            tgt_with_eos: TokenSequence::new(tgt),
            true_len,
        });
    }
    Ok(out)
}

/// Where the decoder's control length comes from for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlChoice {
    GroundTruth,
    Predicted,
}

pub struct BatchStats<R> {
    pub l_gen: R,
    pub l_len: Option<R>,
    pub l_all: R,
}

/// Forward (and optionally backward) one batch.
///
/// `lambda` selects the multitask wiring: `Some(lambda_g)` evaluates the
/// length head on every example and optimizes the combined loss;
/// `None` trains generation alone under ground-truth control.
pub fn run_batch<R: Real>(
    params: &ModelParams<R>,
    batch: &[&PreparedExample],
    choices: &[ControlChoice],
    lambda: Option<R>,
    phase: Phase,
    grads: Option<&mut ModelParams<R>>,
) -> Result<BatchStats<R>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    assert_eq!(batch.len(), choices.len());

    struct ExamplePass<R: Real> {
        enc: crate::model::EncPass<R>,
        len_pass: Option<crate::model::LenPass<R>>,
        dec: crate::model::DecPass<R>,
        /// Softmax probabilities, reused as the CE gradient basis.
        probs: Matrix<R>,
        ce_sum: R,
        n_tokens: usize,
    }

    let mut passes: Vec<ExamplePass<R>> = Vec::with_capacity(batch.len());
    for (ex, choice) in batch.iter().zip(choices) {
        let enc = encode(params, &ex.src, phase)?;
        let len_pass = lambda.map(|_| predict_length(params, &enc.h));
        let control = match choice {
            ControlChoice::GroundTruth => R::from_usize_c(ex.true_len),
            ControlChoice::Predicted => {
                len_pass
                    .as_ref()
                    .expect("predicted control requires the length head")
                    .l_hat
            }
        };
        let dec = decode_train(params, &enc.h, &ex.tgt_with_eos, control, phase)?;
        let mut probs = dec.logits.clone();
        let mut ce_sum = R::zero();
        let mut n_tokens = 0usize;
        for (t, &y) in ex.tgt_with_eos.ids.iter().enumerate() {
            let lse = log_sum_exp(probs.row(t));
            for v in probs.row_mut(t) {
                *v = (*v - lse).exp();
            }
            if y != PAD {
                ce_sum += lse - dec.logits.get(t, y);
                n_tokens += 1;
            }
        }
        passes.push(ExamplePass {
            enc,
            len_pass,
            dec,
            probs,
            ce_sum,
            n_tokens,
        });
    }

    let total_tokens: usize = passes.iter().map(|p| p.n_tokens).sum();
    if total_tokens == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let l_gen = passes.iter().map(|p| p.ce_sum).sum::<R>() / R::from_usize_c(total_tokens);
    let len_pairs: Vec<(R, usize)> = passes
        .iter()
        .zip(batch)
        .filter_map(|(p, ex)| p.len_pass.as_ref().map(|lp| (lp.l_hat, ex.true_len)))
        .collect();
    let l_len = if lambda.is_some() {
        Some(len_loss(&len_pairs)?)
    } else {
        None
    };
    let l_all = match (lambda, l_len) {
        (Some(lg), Some(ll)) => combined_loss(l_gen, ll, lg)?,
        _ => l_gen,
    };

    if let Some(grads) = grads {
        let gen_coeff = lambda.unwrap_or_else(R::one) / R::from_usize_c(total_tokens);
        let b = R::from_usize_c(batch.len());
        for ((pass, ex), choice) in passes.iter().zip(batch).zip(choices) {
            // d(L_all)/d(logits) = gen_coeff * (softmax - onehot) per token.
            let mut dlogits = pass.probs.scale(gen_coeff);
            for (t, &y) in ex.tgt_with_eos.ids.iter().enumerate() {
                if y != PAD {
                    dlogits.set(t, y, dlogits.get(t, y) - gen_coeff);
                } else {
                    for v in dlogits.row_mut(t) {
                        *v = R::zero();
                    }
                }
            }
            let (mut dh, dcontrol) =
                decoder_backward(params, &pass.enc.h, &pass.dec, &dlogits, grads);
            if let (Some(lg), Some(ll), Some(len_pass)) = (lambda, l_len, pass.len_pass.as_ref()) {
                let mut dl_hat = R::zero();
                if *choice == ControlChoice::Predicted {
                    dl_hat += dcontrol;
                }
                if ll > R::zero() {
                    let resid = len_pass.l_hat - R::from_usize_c(ex.true_len);
                    dl_hat += (R::one() - lg) * resid / (b * ll);
                }
                let dh_len =
                    len_head_backward(params, len_pass, dl_hat, pass.enc.h.rows, false, grads);
                dh.add_assign(&dh_len);
            }
            encoder_backward(params, &pass.enc, &dh, grads);
        }
    }

    Ok(BatchStats {
        l_gen,
        l_len,
        l_all,
    })
}

/// Length-regression batch against the pipeline tower: RMSE only, touching
/// the tower and head parameters exclusively.
pub fn run_len_batch<R: Real>(
    params: &ModelParams<R>,
    batch: &[&PreparedExample],
    phase: Phase,
    grads: Option<&mut ModelParams<R>>,
) -> Result<R, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut passes = Vec::with_capacity(batch.len());
    for ex in batch {
        let enc = encode_for_length(params, &ex.src, phase)?;
        let len_pass = predict_length(params, &enc.h);
        passes.push((enc, len_pass));
    }
    let pairs: Vec<(R, usize)> = passes
        .iter()
        .zip(batch)
        .map(|((_, lp), ex)| (lp.l_hat, ex.true_len))
        .collect();
    let l_len = len_loss(&pairs)?;
    if let Some(grads) = grads {
        if l_len > R::zero() {
            let b = R::from_usize_c(batch.len());
            for ((enc, lp), ex) in passes.iter().zip(batch) {
                let dl_hat = (lp.l_hat - R::from_usize_c(ex.true_len)) / (b * l_len);
                let dh = len_head_backward(params, lp, dl_hat, enc.h.rows, false, grads);
                encoder_backward(params, enc, &dh, grads);
            }
        }
    }
    Ok(l_len)
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

fn batches(n: usize, batch_size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(rng, &mut idx);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train a model under `config` on the given corpus. Deterministic for a
/// fixed `(config, corpus, vocab, model_cfg)`.
pub fn train<R: Real>(
    config: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocab,
    model_cfg: &ModelConfig,
) -> Result<(ModelParams<R>, TrainLog), TrainError> {
    train_with(config, corpus, vocab, model_cfg, |_, _| {})
}

/// [`train`] with an end-of-epoch callback (checkpoint writing and the
/// like live in the caller).
pub fn train_with<R: Real>(
    config: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocab,
    model_cfg: &ModelConfig,
    mut on_epoch_end: impl FnMut(usize, &ModelParams<R>),
) -> Result<(ModelParams<R>, TrainLog), TrainError> {
    config.validate()?;
    model_cfg.validate()?;
    if corpus.examples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let examples = prepare_examples(corpus, vocab, model_cfg)?;
    let mut params = ModelParams::<R>::init(model_cfg, config.seed);
    let mut log = TrainLog::default();

    match config.strategy {
        Strategy::OracleControl | Strategy::HeuristicControl => {
            gen_phase(
                config,
                &examples,
                &mut params,
                None,
                &mut log,
                &mut on_epoch_end,
            )?;
        }
        Strategy::VanillaMultitask => {
            gen_phase(
                config,
                &examples,
                &mut params,
                Some(MultitaskMode::AlwaysPredicted),
                &mut log,
                &mut on_epoch_end,
            )?;
        }
        Strategy::ScheduledSampling => {
            gen_phase(
                config,
                &examples,
                &mut params,
                Some(MultitaskMode::Scheduled),
                &mut log,
                &mut on_epoch_end,
            )?;
        }
        Strategy::TeacherForcingPipeline => {
            // Generation model first, under ground-truth lengths only.
            gen_phase(
                config,
                &examples,
                &mut params,
                None,
                &mut log,
                &mut on_epoch_end,
            )?;
            // Then the standalone length model (tower + head), trained by
            // RMSE alone; the generation weights receive no gradient.
            params.add_len_tower(config.seed);
            len_phase(config, &examples, &mut params, &mut log)?;
        }
    }

    Ok((params, log))
}

enum MultitaskMode {
    AlwaysPredicted,
    Scheduled,
}

fn gen_phase<R: Real>(
    config: &TrainConfig,
    examples: &[PreparedExample],
    params: &mut ModelParams<R>,
    multitask: Option<MultitaskMode>,
    log: &mut TrainLog,
    on_epoch_end: &mut impl FnMut(usize, &ModelParams<R>),
) -> Result<(), TrainError> {
    let mut opt = Adam::new(params, R::from_f64_c(config.lr));
    let lambda = multitask.as_ref().map(|_| R::from_f64_c(config.lambda_g));
    let mut global_step = 0u64;
    for epoch in 0..config.epochs {
        let mut data_rng = substream(config.seed, "data", epoch as u64);
        let chunks = batches(examples.len(), config.batch_size, &mut data_rng);
        let total_steps = chunks.len();
        for (step, chunk) in chunks.iter().enumerate() {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (choices, p) = match &multitask {
                None => (vec![ControlChoice::GroundTruth; batch.len()], None),
                Some(MultitaskMode::AlwaysPredicted) => {
                    (vec![ControlChoice::Predicted; batch.len()], None)
                }
                Some(MultitaskMode::Scheduled) => {
                    let p = sampling_prob(config.p0, config.k, epoch, step, total_steps)?;
                    let mut coin_rng = substream(config.seed, "sampling", global_step);
                    let choices = (0..batch.len())
                        .map(|_| {
                            if rng::uniform(&mut coin_rng) < p {
                                ControlChoice::GroundTruth
                            } else {
                                ControlChoice::Predicted
                            }
                        })
                        .collect();
                    (choices, Some(p))
                }
            };
            let dropout_seed = substream(config.seed, "dropout_step", global_step).next_u64();
            let phase = Phase::Train { dropout_seed };
            let mut grads = grad_buffer(params);
            let stats = run_batch(params, &batch, &choices, lambda, phase, Some(&mut grads))?;
            opt.step(params, &grads);
            log.records.push(StepRecord {
                epoch,
                step,
                l_gen: Some(stats.l_gen.to_f64_c()),
                l_len: stats.l_len.map(|v| v.to_f64_c()),
                l_all: Some(stats.l_all.to_f64_c()),
                p,
            });
            global_step += 1;
        }
        on_epoch_end(epoch, params);
    }
    Ok(())
}

fn len_phase<R: Real>(
    config: &TrainConfig,
    examples: &[PreparedExample],
    params: &mut ModelParams<R>,
    log: &mut TrainLog,
) -> Result<(), TrainError> {
    let mut opt = Adam::new(params, R::from_f64_c(config.lr));
    let mut global_step = 0u64;
    for epoch in 0..config.epochs {
        let mut data_rng = substream(config.seed, "data/len", epoch as u64);
        let chunks = batches(examples.len(), config.batch_size, &mut data_rng);
        for (step, chunk) in chunks.iter().enumerate() {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let dropout_seed = substream(config.seed, "dropout_step/len", global_step).next_u64();
            let phase = Phase::Train { dropout_seed };
            let mut grads = grad_buffer(params);
            let l_len = run_len_batch(params, &batch, phase, Some(&mut grads))?;
            opt.step(params, &grads);
            log.records.push(StepRecord {
                epoch,
                step,
                l_gen: None,
                l_len: Some(l_len.to_f64_c()),
                l_all: Some(l_len.to_f64_c()),
                p: None,
            });
            global_step += 1;
        }
    }
    Ok(())
}
