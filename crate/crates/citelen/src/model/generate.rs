//! Autoregressive decoding under an explicit length budget.

use super::layers::Phase;
use super::net::{decoder_forward_ids, encode, encode_for_length, predict_length};
use super::params::ModelParams;
use super::ModelError;
use crate::corpus::TokenSequence;
use crate::math::log_sum_exp;
use crate::scalar::{round_half_up, Real};
use crate::vocab::{Vocab, BOS, EOS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// One generated citation with its length bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub example_id: String,
    pub tokens: TokenSequence,
    pub text: String,
    pub desired_len: usize,
    pub generated_len: usize,
    /// Raw regressor output; absent for oracle/heuristic-controlled runs.
    pub predicted_len: Option<f64>,
}

fn argmax<R: Real>(row: &[R]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn last_row_logits<R: Real>(
    params: &ModelParams<R>,
    h: &crate::math::Matrix<R>,
    dec_ids: &[usize],
    control: R,
) -> Result<Vec<R>, ModelError> {
    let (logits, _) = decoder_forward_ids(params, h, dec_ids, control, Phase::Eval)?;
    Ok(logits.row(logits.rows - 1).to_vec())
}

fn greedy<R: Real>(
    params: &ModelParams<R>,
    h: &crate::math::Matrix<R>,
    control: R,
    max_steps: usize,
) -> Result<Vec<usize>, ModelError> {
    let mut dec_ids = vec![BOS];
    let mut out = Vec::new();
    for _ in 0..max_steps {
        let row = last_row_logits(params, h, &dec_ids, control)?;
        let tok = argmax(&row);
        if tok == EOS {
            break;
        }
        out.push(tok);
        dec_ids.push(tok);
    }
    Ok(out)
}

#[derive(Clone)]
struct Hypothesis<R> {
    ids: Vec<usize>,
    log_prob: R,
    finished: bool,
}

fn beam<R: Real>(
    params: &ModelParams<R>,
    h: &crate::math::Matrix<R>,
    control: R,
    max_steps: usize,
    width: usize,
) -> Result<Vec<usize>, ModelError> {
    let width = width.max(1);
    let mut beams = vec![Hypothesis {
        ids: vec![BOS],
        log_prob: R::zero(),
        finished: false,
    }];
    for _ in 0..max_steps {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<Hypothesis<R>> = Vec::new();
        for hyp in &beams {
            if hyp.finished {
                candidates.push(hyp.clone());
                continue;
            }
            let row = last_row_logits(params, h, &hyp.ids, control)?;
            let lse = log_sum_exp(&row);
            // Expanding only the strongest continuations preserves exactness
            // for widths far below the vocabulary size.
            let mut scored: Vec<(usize, R)> =
                row.iter().enumerate().map(|(i, &v)| (i, v - lse)).collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for &(tok, lp) in scored.iter().take(width) {
                let mut next = hyp.clone();
                next.log_prob += lp;
                if tok == EOS {
                    next.finished = true;
                } else {
                    next.ids.push(tok);
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then(a.ids.cmp(&b.ids))
        });
        candidates.truncate(width);
        beams = candidates;
    }
    let best = beams
        .iter()
        .max_by(|a, b| a.log_prob.partial_cmp(&b.log_prob).unwrap())
        .expect("beam never empty");
    Ok(best.ids[1..].to_vec())
}

/// Decode `input` under the given token budget. Stops at EOS or after
/// `max_steps` tokens; the model is never forced to stop at the budget,
/// so `generated_len` measures learned controllability.
pub fn generate<R: Real>(
    params: &ModelParams<R>,
    vocab: &Vocab,
    input: &TokenSequence,
    control_len: usize,
    max_steps: usize,
    mode: DecodeMode,
    example_id: &str,
) -> Result<GenerationResult, ModelError> {
    let enc = encode(params, input, Phase::Eval)?;
    generate_from_hidden(
        params,
        vocab,
        &enc.h,
        control_len,
        max_steps,
        mode,
        example_id,
        None,
    )
}

/// Decode from precomputed encoder states.
#[allow(clippy::too_many_arguments)]
pub fn generate_from_hidden<R: Real>(
    params: &ModelParams<R>,
    vocab: &Vocab,
    h: &crate::math::Matrix<R>,
    control_len: usize,
    max_steps: usize,
    mode: DecodeMode,
    example_id: &str,
    predicted_len: Option<f64>,
) -> Result<GenerationResult, ModelError> {
    if control_len < 1 {
        return Err(ModelError::BadControlLength(control_len as i64));
    }
    let control = R::from_usize_c(control_len);
    let tokens = match mode {
        DecodeMode::Greedy => greedy(params, h, control, max_steps)?,
        DecodeMode::Beam(k) => beam(params, h, control, max_steps, k)?,
    };
    let text = vocab.decode(&tokens);
    Ok(GenerationResult {
        example_id: example_id.to_string(),
        generated_len: tokens.len(),
        tokens: TokenSequence::new(tokens),
        text,
        desired_len: control_len,
        predicted_len,
    })
}

/// Full pipeline of the length-predicting model: encode, regress a length,
/// round half-up and clamp to `[1, max_tgt_len]`, then decode under it.
pub fn predict_and_generate<R: Real>(
    params: &ModelParams<R>,
    vocab: &Vocab,
    input: &TokenSequence,
    max_steps: usize,
    mode: DecodeMode,
    example_id: &str,
) -> Result<GenerationResult, ModelError> {
    let enc = encode(params, input, Phase::Eval)?;
    let l_hat = if params.len_tower.is_some() {
        let len_enc = encode_for_length(params, input, Phase::Eval)?;
        predict_length(params, &len_enc.h).l_hat
    } else {
        predict_length(params, &enc.h).l_hat
    };
    let desired = round_half_up(l_hat).clamp(1, params.config.max_tgt_len as i64) as usize;
    generate_from_hidden(
        params,
        vocab,
        &enc.h,
        desired,
        max_steps,
        mode,
        example_id,
        Some(l_hat.to_f64_c()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::vocab::CLS;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            vocab_size: 20,
            max_src_len: 16,
            max_tgt_len: 12,
            dropout: 0.0,
        }
    }

    fn vocab20() -> Vocab {
        Vocab::new((0..13).map(|i| format!("w{i}")))
    }

    #[test]
    fn untrained_model_terminates_within_max_steps() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 3);
        let vocab = vocab20();
        let input = TokenSequence::new(vec![CLS, 7, 8, 9]);
        let r = generate(&params, &vocab, &input, 5, 9, DecodeMode::Greedy, "e0").unwrap();
        assert!(r.generated_len <= 9);
        assert_eq!(r.generated_len, r.tokens.len());
        assert_eq!(r.desired_len, 5);
        assert!(r.predicted_len.is_none());
    }

    #[test]
    fn greedy_is_deterministic() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 4);
        let vocab = vocab20();
        let input = TokenSequence::new(vec![CLS, 7, 8]);
        let a = generate(&params, &vocab, &input, 4, 8, DecodeMode::Greedy, "e0").unwrap();
        let b = generate(&params, &vocab, &input, 4, 8, DecodeMode::Greedy, "e0").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beam_width_one_matches_greedy() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        let vocab = vocab20();
        let input = TokenSequence::new(vec![CLS, 7, 9]);
        let g = generate(&params, &vocab, &input, 4, 8, DecodeMode::Greedy, "e0").unwrap();
        let b = generate(&params, &vocab, &input, 4, 8, DecodeMode::Beam(1), "e0").unwrap();
        assert_eq!(g.tokens, b.tokens);
    }

    #[test]
    fn control_length_zero_is_rejected() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 6);
        let vocab = vocab20();
        let input = TokenSequence::new(vec![CLS, 7]);
        assert!(matches!(
            generate(&params, &vocab, &input, 0, 8, DecodeMode::Greedy, "e0"),
            Err(ModelError::BadControlLength(0))
        ));
    }

    #[test]
    fn predict_and_generate_rounds_and_clamps() {
        let mut params = ModelParams::<f64>::init(&tiny_cfg(), 7);
        let vocab = vocab20();
        let input = TokenSequence::new(vec![CLS, 7, 8]);
        // Force the regressor output via the bias of its last layer.
        for v in &mut params.len_head.w1.w.data {
            *v = 0.0;
        }
        for v in &mut params.len_head.w2.w.data {
            *v = 0.0;
        }
        params.len_head.w2.b.set(0, 0, 19.6);
        let r = predict_and_generate(&params, &vocab, &input, 8, DecodeMode::Greedy, "e0").unwrap();
        assert_eq!(r.desired_len, 20.min(tiny_cfg().max_tgt_len));
        assert_eq!(r.predicted_len, Some(19.6));

        params.len_head.w2.b.set(0, 0, -3.2);
        let r2 =
            predict_and_generate(&params, &vocab, &input, 8, DecodeMode::Greedy, "e0").unwrap();
        assert_eq!(r2.desired_len, 1);
        assert_eq!(r2.predicted_len, Some(-3.2));
    }
}
