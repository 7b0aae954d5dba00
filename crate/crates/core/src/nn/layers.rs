//! Transformer building blocks with explicit forward caches and backward
//! passes. Gradients are accumulated into a parameter struct of the same
//! shape as the layer.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::tensors::impl_tensors;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}
impl_tensors!(Linear { w, b });

impl Linear {
    pub fn init(rng: &mut impl Rng, d_in: usize, d_out: usize, scale: f64) -> Self {
        Linear {
            w: uniform(rng, d_in, d_out, scale),
            b: Array1::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}
impl_tensors!(LayerNorm { gamma, beta });

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.dot(&row) / d;
            *istd = 1.0 / (var + LN_EPS).sqrt();
            row *= *istd;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let scale = cache.inv_std[i] / d;
            let mut out = dx.row_mut(i);
            for j in 0..g.len() {
                out[j] = scale * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Two-layer position-wise network with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}
impl_tensors!(FeedForward { up, down });

pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn init(rng: &mut impl Rng, d_in: usize, hidden: usize, d_out: usize, scale: f64) -> Self {
        FeedForward {
            up: Linear::init(rng, d_in, hidden, scale),
            down: Linear::init(rng, hidden, d_out, scale),
        }
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        FeedForward {
            up: Linear::zeros(d_in, hidden),
            down: Linear::zeros(hidden, d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.up.forward(x);
        let act = pre.mapv(gelu);
        let y = self.down.forward(&act);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FeedForwardCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
        let dact = self.down.backward(&cache.act, dy, &mut grad.down);
        let dpre = dact * &cache.pre.mapv(gelu_grad);
        self.up.backward(&cache.x, &dpre, &mut grad.up)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}
impl_tensors!(Attention { q, k, v, o });

pub struct AttentionCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `[queries, keys]` matrix per head; masked entries are exactly 0.
    pub probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    pub fn init(rng: &mut impl Rng, d: usize, scale: f64) -> Self {
        Attention {
            q: Linear::init(rng, d, d, scale),
            k: Linear::init(rng, d, d, scale),
            v: Linear::init(rng, d, d, scale),
            o: Linear::init(rng, d, d, scale),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Attention {
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
        }
    }

    /// `key_valid[j]` masks key `j`; `causal` additionally hides keys after
    /// the query position.
    pub fn forward(
        &self,
        xq: &Array2<f64>,
        xkv: &Array2<f64>,
        key_valid: &[bool],
        causal: bool,
        n_heads: usize,
    ) -> (Array2<f64>, AttentionCache) {
        debug_assert_eq!(key_valid.len(), xkv.nrows());
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let d = q.ncols();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (tq, tk) = (q.nrows(), k.nrows());

        let mut ctx = Array2::zeros((tq, d));
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let mut p = Array2::zeros((tq, tk));
            for i in 0..tq {
                let allowed = |j: usize| key_valid[j] && (!causal || j <= i);
                let max = (0..tk)
                    .filter(|&j| allowed(j))
                    .map(|j| scores[[i, j]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in (0..tk).filter(|&j| allowed(j)) {
                    let e = (scores[[i, j]] - max).exp();
                    p[[i, j]] = e;
                    total += e;
                }
                p.row_mut(i).mapv_inplace(|e| e / total);
            }
            ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.o.forward(&ctx);
        (
            out,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    /// Returns gradients with respect to the query input and the key/value
    /// input.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dout: &Array2<f64>,
        grad: &mut Attention,
    ) -> (Array2<f64>, Array2<f64>) {
        let n_heads = cache.probs.len();
        let dctx = self.o.backward(&cache.ctx, dout, &mut grad.o);
        let d = cache.q.ncols();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            // softmax backward, row-wise
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = p * &(dp - &row_dot) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.q.backward(&cache.xq, &dq, &mut grad.q);
        let dxkv = self.k.backward(&cache.xkv, &dk, &mut grad.k) + self.v.backward(&cache.xkv, &dv, &mut grad.v);
        (dxq, dxkv)
    }
}
