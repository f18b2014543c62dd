//! Layer primitives with explicit forward caches and hand-derived
//! backward passes.

use crate::math::{softmax_rows, Matrix};
use crate::rng;
use crate::scalar::Real;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Whether a forward pass is part of training (dropout active, masks drawn
/// from the per-step seed) or inference (fully deterministic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Eval,
    Train { dropout_seed: u64 },
}

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm<R> {
    pub gamma: Matrix<R>,
    pub beta: Matrix<R>,
}

pub struct LnCache<R> {
    pub xhat: Matrix<R>,
    pub inv_std: Vec<R>,
}

impl<R: Real> LayerNorm<R> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Matrix::from_fn(1, d, |_, _| R::one()),
            beta: Matrix::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Matrix<R>) -> (Matrix<R>, LnCache<R>) {
        let d = x.cols;
        let dn = R::from_usize_c(d);
        let eps = R::from_f64_c(LN_EPS);
        let mut xhat = Matrix::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut y = Matrix::zeros(x.rows, d);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<R>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / dn;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat.set(r, c, xh);
                y.set(r, c, self.gamma.get(0, c) * xh + self.beta.get(0, c));
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    /// Returns dx; accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        cache: &LnCache<R>,
        dy: &Matrix<R>,
        grads: &mut LayerNorm<R>,
    ) -> Matrix<R> {
        let d = dy.cols;
        let dn = R::from_usize_c(d);
        let mut dx = Matrix::zeros(dy.rows, d);
        for r in 0..dy.rows {
            let mut mean_dxhat = R::zero();
            let mut mean_dxhat_xhat = R::zero();
            for c in 0..d {
                let dyv = dy.get(r, c);
                let xh = cache.xhat.get(r, c);
                grads.gamma.data[c] += dyv * xh;
                grads.beta.data[c] += dyv;
                let dxhat = dyv * self.gamma.get(0, c);
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xh;
            }
            mean_dxhat /= dn;
            mean_dxhat_xhat /= dn;
            let is = cache.inv_std[r];
            for c in 0..d {
                let dxhat = dy.get(r, c) * self.gamma.get(0, c);
                let xh = cache.xhat.get(r, c);
                dx.set(r, c, is * (dxhat - mean_dxhat - xh * mean_dxhat_xhat));
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<R> {
    pub w: Matrix<R>,
    pub b: Matrix<R>,
}

impl<R: Real> Linear<R> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Matrix::zeros(fan_in, fan_out),
            b: Matrix::zeros(1, fan_out),
        }
    }

    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| {
            R::from_f64_c(std * rng::normal(rng))
        });
        Self {
            w,
            b: Matrix::zeros(1, fan_out),
        }
    }

    pub fn forward(&self, x: &Matrix<R>) -> Matrix<R> {
        let mut y = x.matmul(&self.w);
        y.add_row_broadcast(self.b.row(0));
        y
    }

    /// Returns dx; accumulates dw/db into `grads`.
    pub fn backward(&self, x: &Matrix<R>, dy: &Matrix<R>, grads: &mut Linear<R>) -> Matrix<R> {
        grads.w.add_assign(&x.transpose_a_matmul(dy));
        for r in 0..dy.rows {
            for (gb, &g) in grads.b.row_mut(0).iter_mut().zip(dy.row(r)) {
                *gb += g;
            }
        }
        dy.matmul_transpose_b(&self.w)
    }
}

// ---------------------------------------------------------------------------
// GELU (tanh approximation)
// ---------------------------------------------------------------------------

pub fn gelu<R: Real>(x: R) -> R {
    let c = R::from_f64_c((2.0 / std::f64::consts::PI).sqrt());
    let k = R::from_f64_c(0.044715);
    let half = R::from_f64_c(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (R::one() + inner.tanh())
}

pub fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::from_f64_c((2.0 / std::f64::consts::PI).sqrt());
    let k = R::from_f64_c(0.044715);
    let half = R::from_f64_c(0.5);
    let three = R::from_f64_c(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = R::one() - t * t;
    half * (R::one() + t) + half * x * sech2 * c * (R::one() + three * k * x * x)
}

// ---------------------------------------------------------------------------
// Dropout (inverted)
// ---------------------------------------------------------------------------

/// Applies dropout in place and returns the scale mask, or `None` when
/// inactive. The mask is replayed exactly during backward.
pub fn dropout_forward<R: Real>(
    x: &mut Matrix<R>,
    p: f64,
    phase: Phase,
    site: u64,
) -> Option<Matrix<R>> {
    let Phase::Train { dropout_seed } = phase else {
        return None;
    };
    if p <= 0.0 {
        return None;
    }
    let keep = R::from_f64_c(1.0 - p);
    let scale = keep.recip();
    let mut rng = rng::substream(dropout_seed, "dropout", site);
    let mask = Matrix::from_fn(x.rows, x.cols, |_, _| {
        if rng::uniform(&mut rng) < p {
            R::zero()
        } else {
            scale
        }
    });
    for (v, &m) in x.data.iter_mut().zip(&mask.data) {
        *v *= m;
    }
    Some(mask)
}

pub fn dropout_backward<R: Real>(dy: &mut Matrix<R>, mask: &Option<Matrix<R>>) {
    if let Some(mask) = mask {
        for (v, &m) in dy.data.iter_mut().zip(&mask.data) {
            *v *= m;
        }
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention<R> {
    pub wq: Linear<R>,
    pub wk: Linear<R>,
    pub wv: Linear<R>,
    pub wo: Linear<R>,
}

impl<R: Real> Attention<R> {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Linear::zeros(d, d),
            wk: Linear::zeros(d, d),
            wv: Linear::zeros(d, d),
            wo: Linear::zeros(d, d),
        }
    }

    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Linear::init(d, d, rng),
            wk: Linear::init(d, d, rng),
            wv: Linear::init(d, d, rng),
            wo: Linear::init(d, d, rng),
        }
    }
}

pub struct AttnCache<R> {
    pub q: Matrix<R>,
    pub k: Matrix<R>,
    pub v: Matrix<R>,
    /// Post-softmax attention weights, one (n_q x n_k) matrix per head.
    pub probs: Vec<Matrix<R>>,
    /// Concatenated per-head outputs before the output projection.
    pub concat: Matrix<R>,
}

/// Scaled dot-product multi-head attention. `causal` masks keys beyond the
/// query position (used by decoder self-attention).
pub fn attention_forward<R: Real>(
    att: &Attention<R>,
    q_in: &Matrix<R>,
    kv_in: &Matrix<R>,
    n_heads: usize,
    causal: bool,
) -> (Matrix<R>, AttnCache<R>) {
    let d = q_in.cols;
    let dk = d / n_heads;
    let scale = R::from_usize_c(dk).sqrt().recip();
    let q = att.wq.forward(q_in);
    let k = att.wk.forward(kv_in);
    let v = att.wv.forward(kv_in);
    let n_q = q.rows;
    let n_k = k.rows;

    let mut probs = Vec::with_capacity(n_heads);
    let mut concat = Matrix::zeros(n_q, d);
    for h in 0..n_heads {
        let off = h * dk;
        let mut scores = Matrix::zeros(n_q, n_k);
        for i in 0..n_q {
            for j in 0..n_k {
                if causal && j > i {
                    scores.set(i, j, R::neg_infinity());
                    continue;
                }
                let mut acc = R::zero();
                for c in 0..dk {
                    acc += q.get(i, off + c) * k.get(j, off + c);
                }
                scores.set(i, j, acc * scale);
            }
        }
        softmax_rows(&mut scores);
        for i in 0..n_q {
            for c in 0..dk {
                let mut acc = R::zero();
                for j in 0..n_k {
                    acc += scores.get(i, j) * v.get(j, off + c);
                }
                concat.set(i, off + c, acc);
            }
        }
        probs.push(scores);
    }
    let out = att.wo.forward(&concat);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

/// Backward pass for [`attention_forward`]. Returns `(dq_in, dkv_in)` and
/// accumulates weight gradients into `grads`. For self-attention the caller
/// adds the two input gradients together.
pub fn attention_backward<R: Real>(
    att: &Attention<R>,
    cache: &AttnCache<R>,
    q_in: &Matrix<R>,
    kv_in: &Matrix<R>,
    n_heads: usize,
    dout: &Matrix<R>,
    grads: &mut Attention<R>,
) -> (Matrix<R>, Matrix<R>) {
    let d = q_in.cols;
    let dk = d / n_heads;
    let scale = R::from_usize_c(dk).sqrt().recip();
    let n_q = cache.q.rows;
    let n_k = cache.k.rows;

    let dconcat = att.wo.backward(&cache.concat, dout, &mut grads.wo);

    let mut dq = Matrix::zeros(n_q, d);
    let mut dk_m = Matrix::zeros(n_k, d);
    let mut dv = Matrix::zeros(n_k, d);
    for h in 0..n_heads {
        let off = h * dk;
        let probs = &cache.probs[h];
        // dV and dProbs.
        let mut dprobs = Matrix::zeros(n_q, n_k);
        for i in 0..n_q {
            for j in 0..n_k {
                let p = probs.get(i, j);
                let mut dp = R::zero();
                for c in 0..dk {
                    let go = dconcat.get(i, off + c);
                    dp += go * cache.v.get(j, off + c);
                    dv.set(j, off + c, dv.get(j, off + c) + p * go);
                }
                dprobs.set(i, j, dp);
            }
        }
        // Softmax backward: ds = p .* (dp - sum_j dp_j p_j).
        for i in 0..n_q {
            let mut dot = R::zero();
            for j in 0..n_k {
                dot += dprobs.get(i, j) * probs.get(i, j);
            }
            for j in 0..n_k {
                let p = probs.get(i, j);
                let ds = p * (dprobs.get(i, j) - dot) * scale;
                // dQ_i += ds * K_j ; dK_j += ds * Q_i
                for c in 0..dk {
                    dq.set(
                        i,
                        off + c,
                        dq.get(i, off + c) + ds * cache.k.get(j, off + c),
                    );
                    dk_m.set(
                        j,
                        off + c,
                        dk_m.get(j, off + c) + ds * cache.q.get(i, off + c),
                    );
                }
            }
        }
    }

    let dq_in = att.wq.backward(q_in, &dq, &mut grads.wq);
    let mut dkv_in = att.wk.backward(kv_in, &dk_m, &mut grads.wk);
    dkv_in.add_assign(&att.wv.backward(kv_in, &dv, &mut grads.wv));
    (dq_in, dkv_in)
}

// ---------------------------------------------------------------------------
// Feed-forward block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward<R> {
    pub w1: Linear<R>,
    pub w2: Linear<R>,
}

pub struct FfnCache<R> {
    pub pre: Matrix<R>,
    pub act: Matrix<R>,
}

impl<R: Real> FeedForward<R> {
    pub fn zeros(d: usize, f: usize) -> Self {
        Self {
            w1: Linear::zeros(d, f),
            w2: Linear::zeros(f, d),
        }
    }

    pub fn init(d: usize, f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: Linear::init(d, f, rng),
            w2: Linear::init(f, d, rng),
        }
    }

    pub fn forward(&self, x: &Matrix<R>) -> (Matrix<R>, FfnCache<R>) {
        let pre = self.w1.forward(x);
        let act = Matrix {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&v| gelu(v)).collect(),
        };
        let out = self.w2.forward(&act);
        (out, FfnCache { pre, act })
    }

    pub fn backward(
        &self,
        x: &Matrix<R>,
        cache: &FfnCache<R>,
        dy: &Matrix<R>,
        grads: &mut FeedForward<R>,
    ) -> Matrix<R> {
        let mut dact = self.w2.backward(&cache.act, dy, &mut grads.w2);
        for (da, &p) in dact.data.iter_mut().zip(&cache.pre.data) {
            *da *= gelu_grad(p);
        }
        self.w1.backward(x, &dact, &mut grads.w1)
    }
}
