//! Layers over the flat parameter buffer: affine maps, layer norm, GELU,
//! multi-head self-attention.
//!
//! Every layer follows the same shape: `forward` reads parameters and
//! returns outputs (plus whatever cache backward needs); `backward` takes
//! the upstream gradient, accumulates parameter gradients into a buffer
//! parallel to the parameters, and returns the input gradient.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2};

use super::{Init, LayoutBuilder};

fn view<'a>(p: &'a [f64], range: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &p[range.clone()]).expect("segment length matches shape")
}

/// y = x W + b, with W stored (in_dim x out_dim) row-major.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w: Range<usize>,
    b: Range<usize>,
}

impl Linear {
    pub fn new(lb: &mut LayoutBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(
            lb,
            name,
            in_dim,
            out_dim,
            Init::Xavier {
                fan_in: in_dim,
                fan_out: out_dim,
            },
        )
    }

    /// Zero-initialized variant for output heads.
    pub fn new_zero(lb: &mut LayoutBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(lb, name, in_dim, out_dim, Init::Zero)
    }

    fn with_init(
        lb: &mut LayoutBuilder,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Self {
        let w = lb.alloc(format!("{name}.w"), in_dim * out_dim, init, true);
        let b = lb.alloc(format!("{name}.b"), out_dim, Init::Zero, false);
        Linear {
            in_dim,
            out_dim,
            w,
            b,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.in_dim);
        let w = view(p, &self.w, self.in_dim, self.out_dim);
        let mut y = x.dot(&w);
        let b = &p[self.b.clone()];
        for mut row in y.rows_mut() {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    /// Accumulates dW and db into `grad_p`, returns dx.
    pub fn backward(
        &self,
        p: &[f64],
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
        grad_p: &mut [f64],
    ) -> Array2<f64> {
        let w = view(p, &self.w, self.in_dim, self.out_dim);
        let dw = x.t().dot(grad_out);
        for (g, d) in grad_p[self.w.clone()].iter_mut().zip(dw.iter()) {
            *g += d;
        }
        let db = grad_out.sum_axis(ndarray::Axis(0));
        for (g, d) in grad_p[self.b.clone()].iter_mut().zip(db.iter()) {
            *g += d;
        }
        grad_out.dot(&w.t())
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    gain: Range<usize>,
    bias: Range<usize>,
}

pub struct LayerNormCache {
    /// Normalized rows (before gain/bias).
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(lb: &mut LayoutBuilder, name: &str, dim: usize) -> Self {
        LayerNorm {
            dim,
            gain: lb.alloc(format!("{name}.gain"), dim, Init::One, false),
            bias: lb.alloc(format!("{name}.bias"), dim, Init::Zero, false),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        debug_assert_eq!(x.ncols(), self.dim);
        let n = x.nrows();
        let d = self.dim as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(n);
        for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std[i] = is;
        }
        let gain = &p[self.gain.clone()];
        let bias = &p[self.bias.clone()];
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * gain[j] + bias[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &[f64],
        cache: &LayerNormCache,
        grad_out: &Array2<f64>,
        grad_p: &mut [f64],
    ) -> Array2<f64> {
        let gain = &p[self.gain.clone()];
        let d = self.dim as f64;
        let mut dx = Array2::zeros(grad_out.raw_dim());
        for i in 0..grad_out.nrows() {
            // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat)
            //         - xhat * mean(dxhat * xhat))
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for j in 0..self.dim {
                let dxh = grad_out[(i, j)] * gain[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * cache.xhat[(i, j)];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            for j in 0..self.dim {
                let dxh = grad_out[(i, j)] * gain[j];
                dx[(i, j)] = cache.inv_std[i]
                    * (dxh - mean_dxhat - cache.xhat[(i, j)] * mean_dxhat_xhat);
            }
        }
        for j in 0..self.dim {
            let mut dg = 0.0;
            let mut db = 0.0;
            for i in 0..grad_out.nrows() {
                dg += grad_out[(i, j)] * cache.xhat[(i, j)];
                db += grad_out[(i, j)];
            }
            grad_p[self.gain.start + j] += dg;
            grad_p[self.bias.start + j] += db;
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

/// dx from upstream gradient and the forward *input*.
pub fn gelu_backward(x: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(gelu_grad);
    dx *= grad_out;
    dx
}

/// Bidirectional multi-head self-attention (no causal mask).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    merged: Array2<f64>,
    /// Softmax rows per head, N x N each.
    attn: Vec<Array2<f64>>,
}

impl MultiHeadAttention {
    pub fn new(lb: &mut LayoutBuilder, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must divide into heads");
        MultiHeadAttention {
            dim,
            heads,
            wq: Linear::new(lb, &format!("{name}.wq"), dim, dim),
            wk: Linear::new(lb, &format!("{name}.wk"), dim, dim),
            wv: Linear::new(lb, &format!("{name}.wv"), dim, dim),
            wo: Linear::new(lb, &format!("{name}.wo"), dim, dim),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let n = x.nrows();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(p, x);
        let k = self.wk.forward(p, x);
        let v = self.wv.forward(p, x);
        let mut merged = Array2::zeros((n, self.dim));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            // Row-wise softmax, max-shifted for stability.
            for mut row in scores.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                row.mapv_inplace(|s| (s - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|s| s / sum);
            }
            let oh = scores.dot(&vh);
            merged.slice_mut(ndarray::s![.., cols]).assign(&oh);
            attn.push(scores);
        }
        let out = self.wo.forward(p, &merged);
        (
            out,
            AttentionCache {
                q,
                k,
                v,
                merged,
                attn,
            },
        )
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &Array2<f64>,
        cache: &AttentionCache,
        grad_out: &Array2<f64>,
        grad_p: &mut [f64],
    ) -> Array2<f64> {
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d_merged = self.wo.backward(p, &cache.merged, grad_out, grad_p);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &cache.attn[h];
            let d_oh = d_merged.slice(ndarray::s![.., cols.clone()]);
            let vh = cache.v.slice(ndarray::s![.., cols.clone()]);
            let qh = cache.q.slice(ndarray::s![.., cols.clone()]);
            let kh = cache.k.slice(ndarray::s![.., cols.clone()]);
            let mut da = d_oh.dot(&vh.t());
            // Softmax backward per row: ds = a * (da - sum(da * a)).
            for i in 0..a.nrows() {
                let dot: f64 = (0..a.ncols()).map(|j| da[(i, j)] * a[(i, j)]).sum();
                for j in 0..a.ncols() {
                    da[(i, j)] = a[(i, j)] * (da[(i, j)] - dot);
                }
            }
            da *= scale;
            dq.slice_mut(ndarray::s![.., cols.clone()]).assign(&da.dot(&kh));
            dk.slice_mut(ndarray::s![.., cols.clone()]).assign(&da.t().dot(&qh));
            dv.slice_mut(ndarray::s![.., cols]).assign(&a.t().dot(&d_oh));
        }
        let mut dx = self.wq.backward(p, x, &dq, grad_p);
        dx += &self.wk.backward(p, x, &dk, grad_p);
        dx += &self.wv.backward(p, x, &dv, grad_p);
        dx
    }
}
