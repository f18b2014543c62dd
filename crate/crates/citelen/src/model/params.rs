//! Parameter containers, initialization, and the Adam optimizer.

use super::layers::{Attention, FeedForward, LayerNorm, Linear};
use super::ModelConfig;
use crate::math::Matrix;
use crate::rng::{self, substream};
use crate::scalar::Real;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncLayer<R> {
    pub ln1: LayerNorm<R>,
    pub attn: Attention<R>,
    pub ln2: LayerNorm<R>,
    pub ffn: FeedForward<R>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecLayer<R> {
    pub ln1: LayerNorm<R>,
    pub self_attn: Attention<R>,
    pub ln2: LayerNorm<R>,
    pub cross_attn: Attention<R>,
    pub ln3: LayerNorm<R>,
    pub ffn: FeedForward<R>,
}

/// Embedding plus encoder layers; also reused as the pipeline strategy's
/// standalone length tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStack<R> {
    pub embedding: Matrix<R>,
    pub layers: Vec<EncLayer<R>>,
    pub ln_f: LayerNorm<R>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderStack<R> {
    pub layers: Vec<DecLayer<R>>,
    pub ln_f: LayerNorm<R>,
}

/// Two-layer feed-forward length head with tanh, scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LenHead<R> {
    pub w1: Linear<R>,
    pub w2: Linear<R>,
}

/// All weights of the model. The decoder shares the encoder's embedding
/// table. `len_tower`, present only for pipeline-trained models, is a
/// separate encoder whose sole consumer is the length head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<R> {
    pub config: ModelConfig,
    pub encoder: EncoderStack<R>,
    pub decoder: DecoderStack<R>,
    pub out_proj: Linear<R>,
    pub len_head: LenHead<R>,
    pub len_tower: Option<EncoderStack<R>>,
}

impl<R: Real> EncLayer<R> {
    fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            ln1: LayerNorm::new(cfg.d_model),
            attn: Attention::zeros(cfg.d_model),
            ln2: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::zeros(cfg.d_model, cfg.ffn_dim),
        }
    }

    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1: LayerNorm::new(cfg.d_model),
            attn: Attention::init(cfg.d_model, rng),
            ln2: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::init(cfg.d_model, cfg.ffn_dim, rng),
        }
    }

    fn tensors(&self) -> Vec<&Matrix<R>> {
        vec![
            &self.ln1.gamma,
            &self.ln1.beta,
            &self.attn.wq.w,
            &self.attn.wq.b,
            &self.attn.wk.w,
            &self.attn.wk.b,
            &self.attn.wv.w,
            &self.attn.wv.b,
            &self.attn.wo.w,
            &self.attn.wo.b,
            &self.ln2.gamma,
            &self.ln2.beta,
            &self.ffn.w1.w,
            &self.ffn.w1.b,
            &self.ffn.w2.w,
            &self.ffn.w2.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<R>> {
        vec![
            &mut self.ln1.gamma,
            &mut self.ln1.beta,
            &mut self.attn.wq.w,
            &mut self.attn.wq.b,
            &mut self.attn.wk.w,
            &mut self.attn.wk.b,
            &mut self.attn.wv.w,
            &mut self.attn.wv.b,
            &mut self.attn.wo.w,
            &mut self.attn.wo.b,
            &mut self.ln2.gamma,
            &mut self.ln2.beta,
            &mut self.ffn.w1.w,
            &mut self.ffn.w1.b,
            &mut self.ffn.w2.w,
            &mut self.ffn.w2.b,
        ]
    }

    const TENSOR_NAMES: [&'static str; 16] = [
        "ln1.gamma",
        "ln1.beta",
        "attn.wq.w",
        "attn.wq.b",
        "attn.wk.w",
        "attn.wk.b",
        "attn.wv.w",
        "attn.wv.b",
        "attn.wo.w",
        "attn.wo.b",
        "ln2.gamma",
        "ln2.beta",
        "ffn.w1.w",
        "ffn.w1.b",
        "ffn.w2.w",
        "ffn.w2.b",
    ];
}

impl<R: Real> DecLayer<R> {
    fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            ln1: LayerNorm::new(cfg.d_model),
            self_attn: Attention::zeros(cfg.d_model),
            ln2: LayerNorm::new(cfg.d_model),
            cross_attn: Attention::zeros(cfg.d_model),
            ln3: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::zeros(cfg.d_model, cfg.ffn_dim),
        }
    }

    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1: LayerNorm::new(cfg.d_model),
            self_attn: Attention::init(cfg.d_model, rng),
            ln2: LayerNorm::new(cfg.d_model),
            cross_attn: Attention::init(cfg.d_model, rng),
            ln3: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::init(cfg.d_model, cfg.ffn_dim, rng),
        }
    }

    fn tensors(&self) -> Vec<&Matrix<R>> {
        vec![
            &self.ln1.gamma,
            &self.ln1.beta,
            &self.self_attn.wq.w,
            &self.self_attn.wq.b,
            &self.self_attn.wk.w,
            &self.self_attn.wk.b,
            &self.self_attn.wv.w,
            &self.self_attn.wv.b,
            &self.self_attn.wo.w,
            &self.self_attn.wo.b,
            &self.ln2.gamma,
            &self.ln2.beta,
            &self.cross_attn.wq.w,
            &self.cross_attn.wq.b,
            &self.cross_attn.wk.w,
            &self.cross_attn.wk.b,
            &self.cross_attn.wv.w,
            &self.cross_attn.wv.b,
            &self.cross_attn.wo.w,
            &self.cross_attn.wo.b,
            &self.ln3.gamma,
            &self.ln3.beta,
            &self.ffn.w1.w,
            &self.ffn.w1.b,
            &self.ffn.w2.w,
            &self.ffn.w2.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix<R>> {
        vec![
            &mut self.ln1.gamma,
            &mut self.ln1.beta,
            &mut self.self_attn.wq.w,
            &mut self.self_attn.wq.b,
            &mut self.self_attn.wk.w,
            &mut self.self_attn.wk.b,
            &mut self.self_attn.wv.w,
            &mut self.self_attn.wv.b,
            &mut self.self_attn.wo.w,
            &mut self.self_attn.wo.b,
            &mut self.ln2.gamma,
            &mut self.ln2.beta,
            &mut self.cross_attn.wq.w,
            &mut self.cross_attn.wq.b,
            &mut self.cross_attn.wk.w,
            &mut self.cross_attn.wk.b,
            &mut self.cross_attn.wv.w,
            &mut self.cross_attn.wv.b,
            &mut self.cross_attn.wo.w,
            &mut self.cross_attn.wo.b,
            &mut self.ln3.gamma,
            &mut self.ln3.beta,
            &mut self.ffn.w1.w,
            &mut self.ffn.w1.b,
            &mut self.ffn.w2.w,
            &mut self.ffn.w2.b,
        ]
    }

    const TENSOR_NAMES: [&'static str; 26] = [
        "ln1.gamma",
        "ln1.beta",
        "self_attn.wq.w",
        "self_attn.wq.b",
        "self_attn.wk.w",
        "self_attn.wk.b",
        "self_attn.wv.w",
        "self_attn.wv.b",
        "self_attn.wo.w",
        "self_attn.wo.b",
        "ln2.gamma",
        "ln2.beta",
        "cross_attn.wq.w",
        "cross_attn.wq.b",
        "cross_attn.wk.w",
        "cross_attn.wk.b",
        "cross_attn.wv.w",
        "cross_attn.wv.b",
        "cross_attn.wo.w",
        "cross_attn.wo.b",
        "ln3.gamma",
        "ln3.beta",
        "ffn.w1.w",
        "ffn.w1.b",
        "ffn.w2.w",
        "ffn.w2.b",
    ];
}

impl<R: Real> EncoderStack<R> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            embedding: Matrix::zeros(cfg.vocab_size, cfg.d_model),
            layers: (0..cfg.n_layers).map(|_| EncLayer::zeros(cfg)).collect(),
            ln_f: LayerNorm::new(cfg.d_model),
        }
    }

    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let emb_std = 1.0 / (cfg.d_model as f64).sqrt();
        Self {
            embedding: Matrix::from_fn(cfg.vocab_size, cfg.d_model, |_, _| {
                R::from_f64_c(emb_std * rng::normal(rng))
            }),
            layers: (0..cfg.n_layers)
                .map(|_| EncLayer::init(cfg, rng))
                .collect(),
            ln_f: LayerNorm::new(cfg.d_model),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix<R>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.ln_f.gamma);
        out.push(&self.ln_f.beta);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<R>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.ln_f.gamma);
        out.push(&mut self.ln_f.beta);
        out
    }

    fn names(prefix: &str, n_layers: usize, names: &mut Vec<String>) {
        names.push(format!("{prefix}.embedding"));
        for i in 0..n_layers {
            for part in EncLayer::<R>::TENSOR_NAMES {
                names.push(format!("{prefix}.layer{i}.{part}"));
            }
        }
        names.push(format!("{prefix}.ln_f.gamma"));
        names.push(format!("{prefix}.ln_f.beta"));
    }
}

impl<R: Real> ModelParams<R> {
    /// Deterministic initialization from a seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        cfg.validate().expect("valid config");
        let mut rng = substream(seed, "init", 0);
        Self {
            config: *cfg,
            encoder: EncoderStack::init(cfg, &mut rng),
            decoder: DecoderStack {
                layers: (0..cfg.n_layers)
                    .map(|_| DecLayer::init(cfg, &mut rng))
                    .collect(),
                ln_f: LayerNorm::new(cfg.d_model),
            },
            out_proj: Linear::init(cfg.d_model, cfg.vocab_size, &mut rng),
            len_head: LenHead {
                w1: Linear::init(cfg.d_model, cfg.d_model, &mut rng),
                w2: Linear::init(cfg.d_model, 1, &mut rng),
            },
            len_tower: None,
        }
    }

    /// Same tensor shapes as `self` with LayerNorm defaults; gradient and
    /// optimizer buffers are produced by [`grad_buffer`].
    pub fn zeros_like(&self) -> Self {
        let cfg = &self.config;
        Self {
            config: *cfg,
            encoder: EncoderStack::zeros(cfg),
            decoder: DecoderStack {
                layers: (0..cfg.n_layers).map(|_| DecLayer::zeros(cfg)).collect(),
                ln_f: LayerNorm::new(cfg.d_model),
            },
            out_proj: Linear::zeros(cfg.d_model, cfg.vocab_size),
            len_head: LenHead {
                w1: Linear::zeros(cfg.d_model, cfg.d_model),
                w2: Linear::zeros(cfg.d_model, 1),
            },
            len_tower: self.len_tower.as_ref().map(|_| EncoderStack::zeros(cfg)),
        }
    }

    /// Grow the pipeline length tower, freshly initialized from `seed`.
    pub fn add_len_tower(&mut self, seed: u64) {
        let mut rng = substream(seed, "init/len_tower", 0);
        self.len_tower = Some(EncoderStack::init(&self.config, &mut rng));
    }

    /// Flat list of every tensor in a stable order; gradient buffers and
    /// optimizer state line up index-by-index.
    pub fn tensors(&self) -> Vec<&Matrix<R>> {
        let mut out = self.encoder.tensors();
        for l in &self.decoder.layers {
            out.extend(l.tensors());
        }
        out.push(&self.decoder.ln_f.gamma);
        out.push(&self.decoder.ln_f.beta);
        out.push(&self.out_proj.w);
        out.push(&self.out_proj.b);
        out.push(&self.len_head.w1.w);
        out.push(&self.len_head.w1.b);
        out.push(&self.len_head.w2.w);
        out.push(&self.len_head.w2.b);
        if let Some(tower) = &self.len_tower {
            out.extend(tower.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<R>> {
        let mut out = self.encoder.tensors_mut();
        for l in &mut self.decoder.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.decoder.ln_f.gamma);
        out.push(&mut self.decoder.ln_f.beta);
        out.push(&mut self.out_proj.w);
        out.push(&mut self.out_proj.b);
        out.push(&mut self.len_head.w1.w);
        out.push(&mut self.len_head.w1.b);
        out.push(&mut self.len_head.w2.w);
        out.push(&mut self.len_head.w2.b);
        if let Some(tower) = &mut self.len_tower {
            out.extend(tower.tensors_mut());
        }
        out
    }

    /// Human-readable name per tensor, parallel to [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        EncoderStack::<R>::names("encoder", self.encoder.layers.len(), &mut names);
        for i in 0..self.decoder.layers.len() {
            for part in DecLayer::<R>::TENSOR_NAMES {
                names.push(format!("decoder.layer{i}.{part}"));
            }
        }
        names.push("decoder.ln_f.gamma".into());
        names.push("decoder.ln_f.beta".into());
        names.push("out_proj.w".into());
        names.push("out_proj.b".into());
        names.push("len_head.w1.w".into());
        names.push("len_head.w1.b".into());
        names.push("len_head.w2.w".into());
        names.push("len_head.w2.b".into());
        if self.len_tower.is_some() {
            EncoderStack::<R>::names("len_tower", self.encoder.layers.len(), &mut names);
        }
        names
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }
}

/// Gradient buffer shaped like the parameters, all entries zero.
pub fn grad_buffer<R: Real>(params: &ModelParams<R>) -> ModelParams<R> {
    let mut g = params.zeros_like();
    for m in g.tensors_mut() {
        for v in &mut m.data {
            *v = R::zero();
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct Adam<R> {
    m: ModelParams<R>,
    v: ModelParams<R>,
    t: usize,
    pub lr: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
}

impl<R: Real> Adam<R> {
    pub fn new(params: &ModelParams<R>, lr: R) -> Self {
        Self {
            m: grad_buffer(params),
            v: grad_buffer(params),
            t: 0,
            lr,
            beta1: R::from_f64_c(0.9),
            beta2: R::from_f64_c(0.999),
            eps: R::from_f64_c(1e-8),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<R>, grads: &ModelParams<R>) {
        self.t += 1;
        let t = R::from_usize_c(self.t);
        let bc1 = R::one() - self.beta1.powf(t);
        let bc2 = R::one() - self.beta2.powf(t);
        let one = R::one();
        let mut p_t = params.tensors_mut();
        let g_t = grads.tensors();
        let mut m_t = self.m.tensors_mut();
        let mut v_t = self.v.tensors_mut();
        assert_eq!(p_t.len(), g_t.len(), "gradient buffer shape drift");
        for i in 0..p_t.len() {
            let p = &mut p_t[i];
            let g = g_t[i];
            let m = &mut m_t[i];
            let v = &mut v_t[i];
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (one - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (one - self.beta2) * gj * gj;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                p.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let a = ModelParams::<f64>::init(&cfg, 7);
        let b = ModelParams::<f64>::init(&cfg, 7);
        let c = ModelParams::<f64>::init(&cfg, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn tensor_lists_align_with_names_and_buffers() {
        let cfg = tiny_cfg();
        let mut p = ModelParams::<f64>::init(&cfg, 1);
        assert_eq!(p.tensors().len(), p.tensor_names().len());
        assert_eq!(p.tensors().len(), p.tensors_mut().len());
        let g = grad_buffer(&p);
        assert_eq!(g.tensors().len(), p.tensors().len());
        for (a, b) in p.tensors().iter().zip(g.tensors()) {
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        }
        p.add_len_tower(3);
        let g2 = grad_buffer(&p);
        assert_eq!(g2.tensors().len(), p.tensors().len());
        assert_eq!(p.tensor_names().len(), p.tensors().len());
    }

    #[test]
    fn grad_buffer_is_all_zero() {
        let p = ModelParams::<f64>::init(&tiny_cfg(), 2);
        let g = grad_buffer(&p);
        for m in g.tensors() {
            assert!(m.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize sum(p^2) over the embedding only; grads = 2p.
        let cfg = tiny_cfg();
        let mut p = ModelParams::<f64>::init(&cfg, 3);
        let mut opt = Adam::new(&p, 0.05);
        let loss =
            |p: &ModelParams<f64>| -> f64 { p.encoder.embedding.data.iter().map(|v| v * v).sum() };
        let initial = loss(&p);
        for _ in 0..200 {
            let mut g = grad_buffer(&p);
            g.encoder.embedding = p.encoder.embedding.scale(2.0);
            opt.step(&mut p, &g);
        }
        assert!(loss(&p) < initial * 0.01);
    }

    #[test]
    fn len_head_output_dimension_is_one() {
        let p = ModelParams::<f64>::init(&tiny_cfg(), 4);
        assert_eq!(p.len_head.w2.w.cols, 1);
        assert_eq!(p.len_head.w2.b.cols, 1);
    }
}
