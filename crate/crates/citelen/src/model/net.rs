//! Encoder, decoder, and length-head passes with explicit caches.
//!
//! The decoder's token embeddings receive the length-difference encoding
//! in place of absolute positional encodings, so every step observes its
//! remaining token budget; backward returns the gradient with respect to
//! that control length, which is how the generation loss reaches the
//! length regressor when the control is a live prediction.

use super::layers::{
    attention_backward, attention_forward, dropout_backward, dropout_forward, AttnCache, FfnCache,
    LnCache, Phase,
};
use super::params::{EncLayer, EncoderStack, ModelParams};
use super::{ModelConfig, ModelError};
use crate::corpus::TokenSequence;
use crate::ldpe::{ldpe_grad_len, ldpe_value, sinusoidal_pe};
use crate::math::Matrix;
use crate::scalar::Real;

fn check_ids(ids: &[usize], vocab: usize) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    for &id in ids {
        if id >= vocab {
            return Err(ModelError::BadToken { id, vocab });
        }
    }
    Ok(())
}

fn embed_scaled<R: Real>(embedding: &Matrix<R>, ids: &[usize]) -> Matrix<R> {
    let d = embedding.cols;
    let scale = R::from_usize_c(d).sqrt();
    Matrix::from_fn(ids.len(), d, |r, c| embedding.get(ids[r], c) * scale)
}

// ---------------------------------------------------------------------------
// Encoder stack
// ---------------------------------------------------------------------------

struct EncLayerCache<R> {
    ln1: LnCache<R>,
    a: Matrix<R>,
    attn: AttnCache<R>,
    attn_mask: Option<Matrix<R>>,
    ln2: LnCache<R>,
    b: Matrix<R>,
    ffn: FfnCache<R>,
    ffn_mask: Option<Matrix<R>>,
}

struct StackCache<R> {
    layers: Vec<EncLayerCache<R>>,
    ln_f: LnCache<R>,
}

fn stack_forward<R: Real>(
    stack: &EncoderStack<R>,
    cfg: &ModelConfig,
    ids: &[usize],
    phase: Phase,
    site_base: u64,
) -> (Matrix<R>, StackCache<R>) {
    let d = cfg.d_model;
    let mut x = embed_scaled(&stack.embedding, ids);
    for (p, row) in (0..ids.len()).zip(0..) {
        let pe = sinusoidal_pe::<R>(p as i64, d);
        for (c, v) in pe.into_iter().enumerate() {
            x.set(row, c, x.get(row, c) + v);
        }
    }
    let mut layers = Vec::with_capacity(stack.layers.len());
    for (li, layer) in stack.layers.iter().enumerate() {
        let (a, ln1) = layer.ln1.forward(&x);
        let (mut attn_out, attn) = attention_forward(&layer.attn, &a, &a, cfg.n_heads, false);
        let attn_mask =
            dropout_forward(&mut attn_out, cfg.dropout, phase, site_base + 2 * li as u64);
        x.add_assign(&attn_out);
        let (b, ln2) = layer.ln2.forward(&x);
        let (mut ffn_out, ffn) = layer.ffn.forward(&b);
        let ffn_mask = dropout_forward(
            &mut ffn_out,
            cfg.dropout,
            phase,
            site_base + 2 * li as u64 + 1,
        );
        x.add_assign(&ffn_out);
        layers.push(EncLayerCache {
            ln1,
            a,
            attn,
            attn_mask,
            ln2,
            b,
            ffn,
            ffn_mask,
        });
    }
    let (h, ln_f) = stack.ln_f.forward(&x);
    (h, StackCache { layers, ln_f })
}

fn stack_backward<R: Real>(
    stack: &EncoderStack<R>,
    cfg: &ModelConfig,
    ids: &[usize],
    cache: &StackCache<R>,
    dh: &Matrix<R>,
    grads: &mut EncoderStack<R>,
) {
    let mut dx = stack.ln_f.backward(&cache.ln_f, dh, &mut grads.ln_f);
    for (li, layer) in stack.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let gl: &mut EncLayer<R> = &mut grads.layers[li];
        let mut dffn_out = dx.clone();
        dropout_backward(&mut dffn_out, &lc.ffn_mask);
        let db = layer.ffn.backward(&lc.b, &lc.ffn, &dffn_out, &mut gl.ffn);
        dx.add_assign(&layer.ln2.backward(&lc.ln2, &db, &mut gl.ln2));
        let mut dattn_out = dx.clone();
        dropout_backward(&mut dattn_out, &lc.attn_mask);
        let (dq, dkv) = attention_backward(
            &layer.attn,
            &lc.attn,
            &lc.a,
            &lc.a,
            cfg.n_heads,
            &dattn_out,
            &mut gl.attn,
        );
        let mut da = dq;
        da.add_assign(&dkv);
        dx.add_assign(&layer.ln1.backward(&lc.ln1, &da, &mut gl.ln1));
    }
    // Embedding rows: d(emb * sqrt(d)) — positional encoding is constant.
    let scale = R::from_usize_c(cfg.d_model).sqrt();
    for (p, &id) in ids.iter().enumerate() {
        for c in 0..cfg.d_model {
            let g = grads.embedding.get(id, c) + dx.get(p, c) * scale;
            grads.embedding.set(id, c, g);
        }
    }
}

/// Output of [`encode`]: hidden states plus everything backward needs.
pub struct EncPass<R> {
    pub h: Matrix<R>,
    pub ids: Vec<usize>,
    cache: StackCache<R>,
    /// Whether this pass ran through the pipeline length tower.
    pub via_len_tower: bool,
}

/// Encode a source sequence (position 0 must be CLS by construction of the
/// input assembly). Deterministic in eval phase.
pub fn encode<R: Real>(
    params: &ModelParams<R>,
    input: &TokenSequence,
    phase: Phase,
) -> Result<EncPass<R>, ModelError> {
    let cfg = &params.config;
    if input.len() > cfg.max_src_len {
        return Err(ModelError::SourceTooLong {
            len: input.len(),
            max: cfg.max_src_len,
        });
    }
    check_ids(&input.ids, cfg.vocab_size)?;
    let (h, cache) = stack_forward(&params.encoder, cfg, &input.ids, phase, 0);
    Ok(EncPass {
        h,
        ids: input.ids.clone(),
        cache,
        via_len_tower: false,
    })
}

/// Encode for length prediction: pipeline-trained models route through
/// their dedicated length tower, all others reuse the main encoder.
pub fn encode_for_length<R: Real>(
    params: &ModelParams<R>,
    input: &TokenSequence,
    phase: Phase,
) -> Result<EncPass<R>, ModelError> {
    let Some(tower) = &params.len_tower else {
        return encode(params, input, phase);
    };
    let cfg = &params.config;
    if input.len() > cfg.max_src_len {
        return Err(ModelError::SourceTooLong {
            len: input.len(),
            max: cfg.max_src_len,
        });
    }
    check_ids(&input.ids, cfg.vocab_size)?;
    let (h, cache) = stack_forward(tower, cfg, &input.ids, phase, 1_000_000);
    Ok(EncPass {
        h,
        ids: input.ids.clone(),
        cache,
        via_len_tower: true,
    })
}

/// Backpropagate `dh` through the encoder that produced `pass`.
pub fn encoder_backward<R: Real>(
    params: &ModelParams<R>,
    pass: &EncPass<R>,
    dh: &Matrix<R>,
    grads: &mut ModelParams<R>,
) {
    let cfg = &params.config;
    if pass.via_len_tower {
        let stack = params.len_tower.as_ref().expect("pass came from len tower");
        let gstack = grads.len_tower.as_mut().expect("grad buffer has len tower");
        stack_backward(stack, cfg, &pass.ids, &pass.cache, dh, gstack);
    } else {
        stack_backward(
            &params.encoder,
            cfg,
            &pass.ids,
            &pass.cache,
            dh,
            &mut grads.encoder,
        );
    }
}

// ---------------------------------------------------------------------------
// Length head
// ---------------------------------------------------------------------------

pub struct LenPass<R> {
    pub l_hat: R,
    x: Matrix<R>,
    pre: Matrix<R>,
    act: Matrix<R>,
}

/// Scalar length prediction from the CLS encoding (row 0 of `h`).
pub fn predict_length<R: Real>(params: &ModelParams<R>, h: &Matrix<R>) -> LenPass<R> {
    let x = Matrix {
        rows: 1,
        cols: h.cols,
        data: h.row(0).to_vec(),
    };
    let pre = params.len_head.w1.forward(&x);
    let act = Matrix {
        rows: 1,
        cols: pre.cols,
        data: pre.data.iter().map(|v| v.tanh()).collect(),
    };
    let out = params.len_head.w2.forward(&act);
    LenPass {
        l_hat: out.get(0, 0),
        x,
        pre,
        act,
    }
}

/// Gradient of the length head. Returns d(loss)/dH as a full matrix (only
/// row 0 is nonzero). When `stop_at_hidden` is set the hidden-state
/// gradient is suppressed, cutting the path into the encoder.
pub fn len_head_backward<R: Real>(
    params: &ModelParams<R>,
    pass: &LenPass<R>,
    dl: R,
    h_rows: usize,
    stop_at_hidden: bool,
    grads: &mut ModelParams<R>,
) -> Matrix<R> {
    let d_out = Matrix {
        rows: 1,
        cols: 1,
        data: vec![dl],
    };
    let mut dact = params
        .len_head
        .w2
        .backward(&pass.act, &d_out, &mut grads.len_head.w2);
    for (da, &a) in dact.data.iter_mut().zip(&pass.act.data) {
        *da *= R::one() - a * a;
    }
    let dx = params
        .len_head
        .w1
        .backward(&pass.x, &dact, &mut grads.len_head.w1);
    let mut dh = Matrix::zeros(h_rows, pass.x.cols);
    if !stop_at_hidden {
        for c in 0..pass.x.cols {
            dh.set(0, c, dx.get(0, c));
        }
    }
    let _ = pass.pre;
    dh
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecLayerCache<R> {
    ln1: LnCache<R>,
    a: Matrix<R>,
    self_attn: AttnCache<R>,
    self_mask: Option<Matrix<R>>,
    ln2: LnCache<R>,
    b: Matrix<R>,
    cross_attn: AttnCache<R>,
    cross_mask: Option<Matrix<R>>,
    ln3: LnCache<R>,
    c: Matrix<R>,
    ffn: FfnCache<R>,
    ffn_mask: Option<Matrix<R>>,
}

/// Teacher-forced decoder pass: caches plus `tgt_len x vocab` logits.
pub struct DecPass<R> {
    pub logits: Matrix<R>,
    dec_ids: Vec<usize>,
    control_len: R,
    layers: Vec<DecLayerCache<R>>,
    ln_f: LnCache<R>,
    y_final: Matrix<R>,
}

/// Run the decoder over `[BOS, target[..-1]]` under budget `control_len`;
/// `logits[t]` scores `target[t]`. The caller appends EOS to the target so
/// the step at which the budget reaches zero learns to close the sequence.
pub fn decode_train<R: Real>(
    params: &ModelParams<R>,
    h: &Matrix<R>,
    target: &TokenSequence,
    control_len: R,
    phase: Phase,
) -> Result<DecPass<R>, ModelError> {
    let cfg = &params.config;
    if target.len() > cfg.max_tgt_len {
        return Err(ModelError::TargetTooLong {
            len: target.len(),
            max: cfg.max_tgt_len,
        });
    }
    check_ids(&target.ids, cfg.vocab_size)?;
    let mut dec_ids = Vec::with_capacity(target.len());
    dec_ids.push(crate::vocab::BOS);
    dec_ids.extend_from_slice(&target.ids[..target.len() - 1]);
    let (logits, pass) = decoder_forward_ids(params, h, &dec_ids, control_len, phase)?;
    Ok(DecPass { logits, ..pass })
}

/// Decoder forward over explicit input ids (used directly by generation).
pub(super) fn decoder_forward_ids<R: Real>(
    params: &ModelParams<R>,
    h: &Matrix<R>,
    dec_ids: &[usize],
    control_len: R,
    phase: Phase,
) -> Result<(Matrix<R>, DecPass<R>), ModelError> {
    let cfg = &params.config;
    check_ids(dec_ids, cfg.vocab_size)?;
    let d = cfg.d_model;
    let t = dec_ids.len();
    let mut y = embed_scaled(&params.encoder.embedding, dec_ids);
    for p in 0..t {
        for k in 0..d {
            y.set(p, k, y.get(p, k) + ldpe_value(p, control_len, k, d));
        }
    }
    let mut layers = Vec::with_capacity(params.decoder.layers.len());
    for (li, layer) in params.decoder.layers.iter().enumerate() {
        let site = 2_000_000 + 3 * li as u64;
        let (a, ln1) = layer.ln1.forward(&y);
        let (mut self_out, self_attn) =
            attention_forward(&layer.self_attn, &a, &a, cfg.n_heads, true);
        let self_mask = dropout_forward(&mut self_out, cfg.dropout, phase, site);
        y.add_assign(&self_out);
        let (b, ln2) = layer.ln2.forward(&y);
        let (mut cross_out, cross_attn) =
            attention_forward(&layer.cross_attn, &b, h, cfg.n_heads, false);
        let cross_mask = dropout_forward(&mut cross_out, cfg.dropout, phase, site + 1);
        y.add_assign(&cross_out);
        let (c, ln3) = layer.ln3.forward(&y);
        let (mut ffn_out, ffn) = layer.ffn.forward(&c);
        let ffn_mask = dropout_forward(&mut ffn_out, cfg.dropout, phase, site + 2);
        y.add_assign(&ffn_out);
        layers.push(DecLayerCache {
            ln1,
            a,
            self_attn,
            self_mask,
            ln2,
            b,
            cross_attn,
            cross_mask,
            ln3,
            c,
            ffn,
            ffn_mask,
        });
    }
    let (y_final, ln_f) = params.decoder.ln_f.forward(&y);
    let logits = params.out_proj.forward(&y_final);
    let pass = DecPass {
        logits: Matrix::zeros(0, 0),
        dec_ids: dec_ids.to_vec(),
        control_len,
        layers,
        ln_f,
        y_final,
    };
    Ok((logits, pass))
}

/// Backward through the decoder. Returns `(dH, d control_len)`; parameter
/// gradients (including the shared embedding) accumulate into `grads`.
pub fn decoder_backward<R: Real>(
    params: &ModelParams<R>,
    h: &Matrix<R>,
    pass: &DecPass<R>,
    dlogits: &Matrix<R>,
    grads: &mut ModelParams<R>,
) -> (Matrix<R>, R) {
    let cfg = &params.config;
    let d = cfg.d_model;
    let dy_final = params
        .out_proj
        .backward(&pass.y_final, dlogits, &mut grads.out_proj);
    let mut dy = params
        .decoder
        .ln_f
        .backward(&pass.ln_f, &dy_final, &mut grads.decoder.ln_f);
    let mut dh = Matrix::zeros(h.rows, h.cols);
    for (li, layer) in params.decoder.layers.iter().enumerate().rev() {
        let lc = &pass.layers[li];
        let gl = &mut grads.decoder.layers[li];
        let mut dffn_out = dy.clone();
        dropout_backward(&mut dffn_out, &lc.ffn_mask);
        let dc = layer.ffn.backward(&lc.c, &lc.ffn, &dffn_out, &mut gl.ffn);
        dy.add_assign(&layer.ln3.backward(&lc.ln3, &dc, &mut gl.ln3));
        let mut dcross_out = dy.clone();
        dropout_backward(&mut dcross_out, &lc.cross_mask);
        let (db, dh_layer) = attention_backward(
            &layer.cross_attn,
            &lc.cross_attn,
            &lc.b,
            h,
            cfg.n_heads,
            &dcross_out,
            &mut gl.cross_attn,
        );
        dh.add_assign(&dh_layer);
        dy.add_assign(&layer.ln2.backward(&lc.ln2, &db, &mut gl.ln2));
        let mut dself_out = dy.clone();
        dropout_backward(&mut dself_out, &lc.self_mask);
        let (dq, dkv) = attention_backward(
            &layer.self_attn,
            &lc.self_attn,
            &lc.a,
            &lc.a,
            cfg.n_heads,
            &dself_out,
            &mut gl.self_attn,
        );
        let mut da = dq;
        da.add_assign(&dkv);
        dy.add_assign(&layer.ln1.backward(&lc.ln1, &da, &mut gl.ln1));
    }
    // dy is now the gradient at embedding + LDPE. Embedding rows pick up
    // the scaled part; the LDPE part contracts against its len-derivative.
    let scale = R::from_usize_c(d).sqrt();
    let mut dcontrol = R::zero();
    for (p, &id) in pass.dec_ids.iter().enumerate() {
        for k in 0..d {
            let g = dy.get(p, k);
            let e = grads.encoder.embedding.get(id, k) + g * scale;
            grads.encoder.embedding.set(id, k, e);
            dcontrol += g * ldpe_grad_len(p, pass.control_len, k, d);
        }
    }
    (dh, dcontrol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::grad_buffer;
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

    fn input(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec())
    }

    #[test]
    fn encode_shape_and_determinism() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        let seq = input(&[CLS, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
        let a = encode(&params, &seq, Phase::Eval).unwrap();
        let b = encode(&params, &seq, Phase::Eval).unwrap();
        assert_eq!(a.h.rows, 10);
        assert_eq!(a.h.cols, 8);
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn encode_rejects_overlong_and_bad_ids() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        let long = input(&[CLS; 17]);
        assert!(matches!(
            encode(&params, &long, Phase::Eval),
            Err(ModelError::SourceTooLong { .. })
        ));
        let bad = input(&[CLS, 99]);
        assert!(matches!(
            encode(&params, &bad, Phase::Eval),
            Err(ModelError::BadToken { .. })
        ));
        assert!(matches!(
            encode(&params, &input(&[]), Phase::Eval),
            Err(ModelError::EmptyInput)
        ));
    }

    #[test]
    fn permuting_non_cls_tokens_changes_h() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        let a = encode(&params, &input(&[CLS, 7, 8, 9]), Phase::Eval).unwrap();
        let b = encode(&params, &input(&[CLS, 8, 7, 9]), Phase::Eval).unwrap();
        assert_ne!(a.h, b.h);
    }

    #[test]
    fn predict_length_consumes_only_cls_row() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        let seq = input(&[CLS, 7, 8, 9]);
        let pass = encode(&params, &seq, Phase::Eval).unwrap();
        let l1 = predict_length(&params, &pass.h).l_hat;
        let mut h2 = pass.h.clone();
        for c in 0..h2.cols {
            h2.set(2, c, h2.get(2, c) + 3.0);
        }
        let l2 = predict_length(&params, &h2).l_hat;
        assert_eq!(l1, l2);
        // Perturbing the CLS row does change the prediction.
        let mut h3 = pass.h.clone();
        h3.set(0, 0, h3.get(0, 0) + 1.0);
        assert_ne!(predict_length(&params, &h3).l_hat, l1);
    }

    #[test]
    fn zeroed_length_head_outputs_bias() {
        let mut params = ModelParams::<f64>::init(&tiny_cfg(), 5);
        for v in &mut params.len_head.w1.w.data {
            *v = 0.0;
        }
        for v in &mut params.len_head.w2.w.data {
            *v = 0.0;
        }
        params.len_head.w2.b.set(0, 0, 4.25);
        for ids in [&[CLS, 7, 8][..], &[CLS, 10, 11, 12, 13][..]] {
            let pass = encode(&params, &input(ids), Phase::Eval).unwrap();
            assert_eq!(predict_length(&params, &pass.h).l_hat, 4.25);
        }
    }

    #[test]
    fn decode_logits_shape_and_causality() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 6);
        let src = input(&[CLS, 7, 8, 9]);
        let enc = encode(&params, &src, Phase::Eval).unwrap();
        let tgt = input(&[10, 11, 12, 13, crate::vocab::EOS]);
        let pass = decode_train(&params, &enc.h, &tgt, 4.0, Phase::Eval).unwrap();
        assert_eq!(pass.logits.rows, 5);
        assert_eq!(pass.logits.cols, 20);
        // Perturb a late target token: logits at earlier steps must not move.
        let tgt2 = input(&[10, 11, 12, 19, crate::vocab::EOS]);
        let pass2 = decode_train(&params, &enc.h, &tgt2, 4.0, Phase::Eval).unwrap();
        for t in 0..=3 {
            for v in 0..20 {
                assert_eq!(pass.logits.get(t, v), pass2.logits.get(t, v), "step {t}");
            }
        }
        assert_ne!(pass.logits.row(4), pass2.logits.row(4));
    }

    #[test]
    fn different_control_lengths_give_different_logits() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 7);
        let enc = encode(&params, &input(&[CLS, 7, 8]), Phase::Eval).unwrap();
        let tgt = input(&[10, 11, crate::vocab::EOS]);
        let a = decode_train(&params, &enc.h, &tgt, 2.0, Phase::Eval).unwrap();
        let b = decode_train(&params, &enc.h, &tgt, 9.0, Phase::Eval).unwrap();
        assert_ne!(a.logits, b.logits);
    }

    #[test]
    fn decode_rejects_overlong_target() {
        let params = ModelParams::<f64>::init(&tiny_cfg(), 7);
        let enc = encode(&params, &input(&[CLS, 7]), Phase::Eval).unwrap();
        let tgt = input(&[10; 13]);
        assert!(matches!(
            decode_train(&params, &enc.h, &tgt, 4.0, Phase::Eval),
            Err(ModelError::TargetTooLong { .. })
        ));
    }

    /// End-to-end gradient check of a composite scalar loss touching the
    /// encoder, decoder, length head, and the control-length path.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let params = ModelParams::<f64>::init(&cfg, 11);
        let src = input(&[CLS, 7, 8, 9, 10]);
        let tgt = input(&[12, 13, 14, crate::vocab::EOS]);

        // Loss: weighted sum of logits + l_hat, with the decoder controlled
        // by the live length prediction (the multitask wiring).
        let loss = |p: &ModelParams<f64>| -> f64 {
            let enc = encode(p, &src, Phase::Eval).unwrap();
            let len_pass = predict_length(p, &enc.h);
            let dec = decode_train(p, &enc.h, &tgt, len_pass.l_hat, Phase::Eval).unwrap();
            let mut acc = 0.0;
            for (i, v) in dec.logits.data.iter().enumerate() {
                acc += v * (0.01 * (i % 17) as f64 - 0.05);
            }
            acc + 0.3 * len_pass.l_hat
        };

        let mut grads = grad_buffer(&params);
        {
            let enc = encode(&params, &src, Phase::Eval).unwrap();
            let len_pass = predict_length(&params, &enc.h);
            let dec = decode_train(&params, &enc.h, &tgt, len_pass.l_hat, Phase::Eval).unwrap();
            let dlogits = Matrix::from_fn(dec.logits.rows, dec.logits.cols, |r, c| {
                let i = r * dec.logits.cols + c;
                0.01 * (i % 17) as f64 - 0.05
            });
            let (mut dh, dcontrol) = decoder_backward(&params, &enc.h, &dec, &dlogits, &mut grads);
            let dl_total = dcontrol + 0.3;
            let dh_len =
                len_head_backward(&params, &len_pass, dl_total, enc.h.rows, false, &mut grads);
            dh.add_assign(&dh_len);
            encoder_backward(&params, &enc, &dh, &mut grads);
        }

        let mut probe = params.clone();
        let names = probe.tensor_names();
        for (ti, name) in names.iter().enumerate() {
            let len = probe.tensors()[ti].data.len();
            // Sparse probing keeps the test fast while covering every tensor.
            let stride = (len / 6).max(1);
            for j in (0..len).step_by(stride) {
                let h = 1e-5;
                let orig = probe.tensors_mut()[ti].data[j];
                probe.tensors_mut()[ti].data[j] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut()[ti].data[j] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut()[ti].data[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.tensors()[ti].data[j];
                // Degenerate parameters (e.g. key biases, which cancel in
                // softmax) have true gradient zero; finite differences only
                // reach rounding noise there.
                if numeric.abs() < 1e-8 && analytic.abs() < 1e-8 {
                    continue;
                }
                let denom = (numeric.abs() + analytic.abs()).max(1e-7);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "{name}[{j}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn len_tower_routes_length_encoding() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::<f64>::init(&cfg, 13);
        let seq = input(&[CLS, 7, 8]);
        let plain = encode_for_length(&params, &seq, Phase::Eval).unwrap();
        assert!(!plain.via_len_tower);
        params.add_len_tower(99);
        let routed = encode_for_length(&params, &seq, Phase::Eval).unwrap();
        assert!(routed.via_len_tower);
        assert_ne!(plain.h, routed.h);
        // Main encode is unaffected by the tower.
        let main = encode(&params, &seq, Phase::Eval).unwrap();
        assert_eq!(main.h, plain.h);
    }
}
