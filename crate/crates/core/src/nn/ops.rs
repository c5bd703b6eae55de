//! Row-wise building blocks shared by the forward and backward passes.

use super::{gemm, EncoderConfig, MatMut, MatRef, ParamStore, Scalar};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Numerically stable softmax (max subtracted first).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `(x - mean) / sqrt(var + eps) * gain + bias` over one vector.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = [T::zero()];
    layer_norm_rows(x, gain, bias, x.len(), &mut out, &mut xhat, &mut inv_std);
    out
}

/// Row-wise layer norm; keeps `xhat` and `1/std` for the backward pass.
pub(crate) fn layer_norm_rows<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    dim: usize,
    out: &mut [T],
    xhat: &mut [T],
    inv_std: &mut [T],
) {
    let n = T::of(dim as f64);
    let eps = T::of(LAYER_NORM_EPS);
    for (r, row) in x.chunks_exact(dim).enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        let o = &mut out[r * dim..(r + 1) * dim];
        let xh = &mut xhat[r * dim..(r + 1) * dim];
        for j in 0..dim {
            xh[j] = (row[j] - mean) * is;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

/// Backward of [`layer_norm_rows`]: adds into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_rows_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    dim: usize,
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let n = T::of(dim as f64);
    let mut dxhat = vec![T::zero(); dim];
    for (r, dyr) in dy.chunks_exact(dim).enumerate() {
        let xh = &xhat[r * dim..(r + 1) * dim];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..dim {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= n;
        mean_dx /= n;
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for j in 0..dim {
            dxr[j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh-form GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}

/// Sinusoidal position code, computed by formula for any position.
pub fn positional_encoding<T: Scalar>(positions: usize, dim: usize) -> Vec<T> {
    let mut pe = vec![T::zero(); positions * dim];
    for t in 0..positions {
        for i in (0..dim).step_by(2) {
            let freq = (-(i as f64) / dim as f64 * 10000f64.ln()).exp();
            let angle = t as f64 * freq;
            pe[t * dim + i] = T::of(angle.sin());
            if i + 1 < dim {
                pe[t * dim + i + 1] = T::of(angle.cos());
            }
        }
    }
    pe
}

/// Mean over rows of a `rows x dim` matrix.
pub fn mean_pool<T: Scalar>(hidden: &[T], dim: usize) -> Result<Vec<T>> {
    if hidden.is_empty() || dim == 0 {
        return Err(Error::EmptySequence);
    }
    let rows = hidden.len() / dim;
    let mut out = vec![T::zero(); dim];
    for row in hidden.chunks_exact(dim) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    let inv = T::one() / T::of(rows as f64);
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Head logits `W * pooled + b`.
pub fn head_logits<T: Scalar>(pooled: &[T], params: &ParamStore<T>) -> Vec<T> {
    let c = params.head_bias.numel();
    let d = pooled.len();
    let w = params.head_weight.data();
    (0..c)
        .map(|k| {
            w[k * d..(k + 1) * d]
                .iter()
                .zip(pooled)
                .map(|(&a, &b)| a * b)
                .sum::<T>()
                + params.head_bias.data()[k]
        })
        .collect()
}

/// `softmax(W * pooled + b)`.
pub fn classify<T: Scalar>(pooled: &[T], params: &ParamStore<T>) -> Vec<T> {
    softmax(&head_logits(pooled, params))
}

/// `out = x * w + b` for `rows x in` input and `in x out` weights.
pub(crate) fn linear<T: Scalar>(x: &[T], w: &[T], b: &[T], rows: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    gemm(
        T::one(),
        MatRef::new(x, rows, d_in),
        MatRef::new(w, d_in, d_out),
        T::one(),
        MatMut::new(&mut out, rows, d_out),
    );
    out
}

/// Backward of [`linear`]: accumulates weight and bias gradients, and
/// `dx += dy * w^T` when `dx` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(
        T::one(),
        MatRef::new(x, rows, d_in).t(),
        MatRef::new(dy, rows, d_out),
        T::one(),
        MatMut::new(dw, d_in, d_out),
    );
    for row in dy.chunks_exact(d_out) {
        db.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    if let Some(dx) = dx {
        gemm(
            T::one(),
            MatRef::new(dy, rows, d_out),
            MatRef::new(w, d_in, d_out).t(),
            T::one(),
            MatMut::new(dx, rows, d_in),
        );
    }
}

/// Scaled dot-product attention over `batch` sequences of `seq` rows each,
/// all heads. Returns (concatenated context, attention weights laid out
/// `[batch][head][seq][seq]`).
pub(crate) fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    batch: usize,
    seq: usize,
    dim: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>) {
    let dh = dim / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let rows = batch * seq;
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    let mut ctx = vec![T::zero(); rows * dim];
    for b in 0..batch {
        for h in 0..heads {
            let qm = MatRef::new(q, rows, dim).block(b * seq, h * dh, seq, dh);
            let km = MatRef::new(k, rows, dim).block(b * seq, h * dh, seq, dh);
            let vm = MatRef::new(v, rows, dim).block(b * seq, h * dh, seq, dh);
            let at = (b * heads + h) * seq * seq;
            let p = &mut probs[at..at + seq * seq];
            gemm(scale, qm, km.t(), T::zero(), MatMut::new(p, seq, seq));
            p.chunks_exact_mut(seq).for_each(softmax_in_place);
            gemm(
                T::one(),
                MatRef::new(p, seq, seq),
                vm,
                T::zero(),
                MatMut::new(&mut ctx, rows, dim).block(b * seq, h * dh, seq, dh),
            );
        }
    }
    (ctx, probs)
}

/// Backward of [`attention`]; writes (not accumulates) `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dctx: &[T],
    batch: usize,
    seq: usize,
    dim: usize,
    heads: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let dh = dim / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let rows = batch * seq;
    let mut dp = vec![T::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            fn blk<T>(m: &[T], rows: usize, dim: usize, r0: usize, c0: usize, seq: usize, dh: usize) -> MatRef<'_, T> {
                MatRef::new(m, rows, dim).block(r0, c0, seq, dh)
            }
            let (r0, c0) = (b * seq, h * dh);
            let at = (b * heads + h) * seq * seq;
            let p = &probs[at..at + seq * seq];
            // dV = P^T dC
            gemm(
                T::one(),
                MatRef::new(p, seq, seq).t(),
                blk(dctx, rows, dim, r0, c0, seq, dh),
                T::zero(),
                MatMut::new(dv, rows, dim).block(b * seq, h * dh, seq, dh),
            );
            // dP = dC V^T
            gemm(T::one(), blk(dctx, rows, dim, r0, c0, seq, dh), blk(v, rows, dim, r0, c0, seq, dh).t(), T::zero(), MatMut::new(&mut dp, seq, seq));
            // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(dh) scale
            for (prow, dprow) in p.chunks_exact(seq).zip(dp.chunks_exact_mut(seq)) {
                let dot: T = prow.iter().zip(dprow.iter()).map(|(&a, &g)| a * g).sum();
                for (g, &a) in dprow.iter_mut().zip(prow) {
                    *g = a * (*g - dot) * scale;
                }
            }
            gemm(
                T::one(),
                MatRef::new(&dp, seq, seq),
                blk(k, rows, dim, r0, c0, seq, dh),
                T::zero(),
                MatMut::new(dq, rows, dim).block(b * seq, h * dh, seq, dh),
            );
            gemm(
                T::one(),
                MatRef::new(&dp, seq, seq).t(),
                blk(q, rows, dim, r0, c0, seq, dh),
                T::zero(),
                MatMut::new(dk, rows, dim).block(b * seq, h * dh, seq, dh),
            );
        }
    }
}

/// Single-sequence multi-head self-attention through one layer's
/// projections. Returns (`seq x d` output, per-head weights).
pub fn multi_head_attention<T: Scalar>(
    x: &[T],
    seq: usize,
    layer: &super::LayerParams<T>,
    config: &EncoderConfig,
) -> Result<(Vec<T>, Vec<T>)> {
    let d = config.model_dim;
    if seq == 0 || x.len() != seq * d {
        return Err(Error::Shape(format!("{} values for {seq} rows of width {d}", x.len())));
    }
    let q = linear(x, layer.wq.data(), layer.bq.data(), seq, d, d);
    let k = linear(x, layer.wk.data(), layer.bk.data(), seq, d, d);
    let v = linear(x, layer.wv.data(), layer.bv.data(), seq, d, d);
    let (ctx, probs) = attention(&q, &k, &v, 1, seq, d, config.heads);
    Ok((linear(&ctx, layer.wo.data(), layer.bo.data(), seq, d, d), probs))
}
