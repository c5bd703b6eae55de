//! Encoder + mean-pool + linear softmax head with an explicit tape for
//! reverse-mode gradients.
//!
//! A batch holds sequences of equal length stacked row-wise, so every
//! projection is one GEMM over `batch * seq` rows; only attention is done
//! per sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    attention, attention_backward, gelu, gelu_grad, layer_norm_rows, layer_norm_rows_backward,
    linear, linear_backward, mean_pool, positional_encoding, softmax_in_place,
};
use super::{EncoderConfig, GradStore, ParamStore, Scalar};
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

#[derive(Debug)]
struct LayerTape<T> {
    input: Vec<T>,
    attn_norm: NormCache<T>,
    attn_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_mask: Option<Vec<T>>,
    ffn_norm: NormCache<T>,
    ffn_in: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    ffn_mask: Option<Vec<T>>,
}

/// Intermediates of one forward pass. Single use.
#[derive(Debug)]
pub struct Tape<T> {
    batch: usize,
    seq: usize,
    input: Vec<T>,
    embed_mask: Option<Vec<T>>,
    layers: Vec<LayerTape<T>>,
    final_norm: NormCache<T>,
    pooled: Vec<T>,
    probs: Vec<T>,
    consumed: bool,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq
    }
}

#[derive(Debug)]
pub struct ForwardOutput<T> {
    /// One probability vector per sequence.
    pub probs: Vec<Vec<T>>,
    /// Mean-pooled encoder output per sequence (the clip embedding).
    pub pooled: Vec<Vec<T>>,
    pub tape: Tape<T>,
}

fn dropout_mask<T: Scalar>(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn add_in_place<T: Scalar>(a: &mut [T], b: &[T]) {
    a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
}

fn mul_in_place<T: Scalar>(a: &mut [T], b: &[T]) {
    a.iter_mut().zip(b).for_each(|(x, &y)| *x *= y);
}

/// Stack equal-length sequences row-wise, converting to `T`.
pub fn stack_batch<T: Scalar>(feats: &[&FeatureSequence], config: &EncoderConfig) -> Result<(Vec<T>, usize)> {
    let first = feats.first().ok_or(Error::EmptySequence)?;
    let seq = first.len();
    if seq == 0 {
        return Err(Error::EmptySequence);
    }
    let mut x = Vec::with_capacity(feats.len() * seq * config.input_dim);
    for f in feats {
        if f.dim() != config.input_dim {
            return Err(Error::Shape(format!(
                "feature dimension {} but encoder expects {}",
                f.dim(),
                config.input_dim
            )));
        }
        if f.len() != seq {
            return Err(Error::Shape(format!(
                "batch mixes sequence lengths {seq} and {}",
                f.len()
            )));
        }
        x.extend(f.as_slice().iter().map(|&v| T::of(v as f64)));
    }
    Ok((x, seq))
}

/// Forward pass over `batch` stacked sequences of `seq` frames (`x` is
/// `batch*seq x input_dim`). Dropout is active only in [`Mode::Train`],
/// with masks drawn from `seed`.
pub fn forward<T: Scalar>(
    params: &ParamStore<T>,
    config: &EncoderConfig,
    x: Vec<T>,
    batch: usize,
    seq: usize,
    mode: Mode,
    seed: u64,
) -> Result<ForwardOutput<T>> {
    config.validate()?;
    let (d, f, heads) = (config.model_dim, config.ffn_dim, config.heads);
    if batch == 0 || seq == 0 {
        return Err(Error::EmptySequence);
    }
    if x.len() != batch * seq * config.input_dim {
        return Err(Error::Shape(format!(
            "input has {} values, expected {batch}x{seq}x{}",
            x.len(),
            config.input_dim
        )));
    }
    let rows = batch * seq;
    let rate = if mode == Mode::Train { config.dropout_rate } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = |n: usize| (rate > 0.0).then(|| dropout_mask::<T>(n, rate, &mut rng));

    let mut h = linear(&x, params.input_weight.data(), params.input_bias.data(), rows, config.input_dim, d);
    let pe = positional_encoding::<T>(seq, d);
    for row in h.chunks_exact_mut(seq * d) {
        add_in_place(row, &pe);
    }
    let embed_mask = mask(rows * d);
    if let Some(m) = &embed_mask {
        mul_in_place(&mut h, m);
    }

    let mut layer_tapes = Vec::with_capacity(config.layers);
    for lp in &params.layers {
        let input = h.clone();
        let mut attn_in = vec![T::zero(); rows * d];
        let mut attn_norm = NormCache { xhat: vec![T::zero(); rows * d], inv_std: vec![T::zero(); rows] };
        layer_norm_rows(&h, lp.attn_norm_gain.data(), lp.attn_norm_bias.data(), d, &mut attn_in, &mut attn_norm.xhat, &mut attn_norm.inv_std);
        let q = linear(&attn_in, lp.wq.data(), lp.bq.data(), rows, d, d);
        let k = linear(&attn_in, lp.wk.data(), lp.bk.data(), rows, d, d);
        let v = linear(&attn_in, lp.wv.data(), lp.bv.data(), rows, d, d);
        let (ctx, probs) = attention(&q, &k, &v, batch, seq, d, heads);
        let mut attn_out = linear(&ctx, lp.wo.data(), lp.bo.data(), rows, d, d);
        let attn_mask = mask(rows * d);
        if let Some(m) = &attn_mask {
            mul_in_place(&mut attn_out, m);
        }
        add_in_place(&mut h, &attn_out);

        let mut ffn_in = vec![T::zero(); rows * d];
        let mut ffn_norm = NormCache { xhat: vec![T::zero(); rows * d], inv_std: vec![T::zero(); rows] };
        layer_norm_rows(&h, lp.ffn_norm_gain.data(), lp.ffn_norm_bias.data(), d, &mut ffn_in, &mut ffn_norm.xhat, &mut ffn_norm.inv_std);
        let pre_act = linear(&ffn_in, lp.w1.data(), lp.b1.data(), rows, d, f);
        let act: Vec<T> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mut ffn_out = linear(&act, lp.w2.data(), lp.b2.data(), rows, f, d);
        let ffn_mask = mask(rows * d);
        if let Some(m) = &ffn_mask {
            mul_in_place(&mut ffn_out, m);
        }
        add_in_place(&mut h, &ffn_out);

        layer_tapes.push(LayerTape {
            input,
            attn_norm,
            attn_in,
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            ffn_norm,
            ffn_in,
            pre_act,
            act,
            ffn_mask,
        });
    }

    let mut hidden = vec![T::zero(); rows * d];
    let mut final_norm = NormCache { xhat: vec![T::zero(); rows * d], inv_std: vec![T::zero(); rows] };
    layer_norm_rows(&h, params.final_norm_gain.data(), params.final_norm_bias.data(), d, &mut hidden, &mut final_norm.xhat, &mut final_norm.inv_std);

    let c = config.num_categories;
    if params.head_bias.numel() != c {
        return Err(Error::Shape(format!(
            "head has {} outputs, config says {c}",
            params.head_bias.numel()
        )));
    }
    let mut pooled = Vec::with_capacity(batch * d);
    for b in 0..batch {
        pooled.extend(mean_pool(&hidden[b * seq * d..(b + 1) * seq * d], d)?);
    }
    // logits = pooled * W^T + b
    let mut probs = linear(&pooled, &transpose(params.head_weight.data(), c, d), params.head_bias.data(), batch, d, c);
    probs.chunks_exact_mut(c).for_each(softmax_in_place);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite { name: "class probabilities".into() });
    }

    Ok(ForwardOutput {
        probs: probs.chunks_exact(c).map(<[T]>::to_vec).collect(),
        pooled: pooled.chunks_exact(d).map(<[T]>::to_vec).collect(),
        tape: Tape {
            batch,
            seq,
            input: x,
            embed_mask,
            layers: layer_tapes,
            final_norm,
            pooled,
            probs,
            consumed: false,
        },
    })
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Mean cross-entropy of the batch in the tape.
pub fn batch_loss<T: Scalar>(tape: &Tape<T>, labels: &[usize]) -> f64 {
    let c = tape.probs.len() / tape.batch;
    labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -tape.probs[b * c + y].f64().max(1e-12).ln())
        .sum::<f64>()
        / tape.batch as f64
}

/// Gradients of the mean cross-entropy over the batch with respect to every
/// parameter. Consumes the tape; a second call fails with
/// [`Error::StaleTape`].
pub fn backward<T: Scalar>(
    params: &ParamStore<T>,
    config: &EncoderConfig,
    tape: &mut Tape<T>,
    labels: &[usize],
) -> Result<GradStore<T>> {
    if tape.consumed {
        return Err(Error::StaleTape);
    }
    let (batch, seq) = (tape.batch, tape.seq);
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let c = config.num_categories;
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index { index: bad, len: c });
    }
    tape.consumed = true;
    let (d, f) = (config.model_dim, config.ffn_dim);
    let rows = batch * seq;
    let mut g = params.zeros_like();

    // d loss / d logits = (p - onehot) / batch
    let inv_b = T::one() / T::of(batch as f64);
    let mut dlogits = tape.probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        dlogits[b * c + y] -= T::one();
    }
    dlogits.iter_mut().for_each(|v| *v *= inv_b);

    // head: logits = pooled W^T + b, so dW = dlogits^T pooled
    let mut dhead_t = vec![T::zero(); d * c];
    let mut dpooled = vec![T::zero(); batch * d];
    linear_backward(
        &tape.pooled,
        &transpose(params.head_weight.data(), c, d),
        &dlogits,
        batch,
        d,
        c,
        &mut dhead_t,
        g.head_bias.data_mut(),
        Some(&mut dpooled),
    );
    g.head_weight.data_mut().copy_from_slice(&transpose(&dhead_t, d, c));

    // mean pool spreads 1/seq to every step
    let inv_t = T::one() / T::of(seq as f64);
    let mut dhidden = vec![T::zero(); rows * d];
    for b in 0..batch {
        for t in 0..seq {
            let dst = &mut dhidden[(b * seq + t) * d..(b * seq + t + 1) * d];
            dst.iter_mut()
                .zip(&dpooled[b * d..(b + 1) * d])
                .for_each(|(o, &v)| *o = v * inv_t);
        }
    }

    let mut dh = vec![T::zero(); rows * d];
    layer_norm_rows_backward(
        &dhidden,
        &tape.final_norm.xhat,
        &tape.final_norm.inv_std,
        params.final_norm_gain.data(),
        d,
        &mut dh,
        g.final_norm_gain.data_mut(),
        g.final_norm_bias.data_mut(),
    );

    for (li, (lt, lp)) in tape.layers.iter().zip(&params.layers).enumerate().rev() {
        let gl = &mut g.layers[li];

        // feed-forward branch
        let mut dout = dh.clone();
        if let Some(m) = &lt.ffn_mask {
            mul_in_place(&mut dout, m);
        }
        let mut dact = vec![T::zero(); rows * f];
        linear_backward(&lt.act, lp.w2.data(), &dout, rows, f, d, gl.w2.data_mut(), gl.b2.data_mut(), Some(&mut dact));
        for (da, &u) in dact.iter_mut().zip(&lt.pre_act) {
            *da *= gelu_grad(u);
        }
        let mut dffn_in = vec![T::zero(); rows * d];
        linear_backward(&lt.ffn_in, lp.w1.data(), &dact, rows, d, f, gl.w1.data_mut(), gl.b1.data_mut(), Some(&mut dffn_in));
        layer_norm_rows_backward(
            &dffn_in,
            &lt.ffn_norm.xhat,
            &lt.ffn_norm.inv_std,
            lp.ffn_norm_gain.data(),
            d,
            &mut dh,
            gl.ffn_norm_gain.data_mut(),
            gl.ffn_norm_bias.data_mut(),
        );

        // attention branch
        let mut dout = dh.clone();
        if let Some(m) = &lt.attn_mask {
            mul_in_place(&mut dout, m);
        }
        let mut dctx = vec![T::zero(); rows * d];
        linear_backward(&lt.ctx, lp.wo.data(), &dout, rows, d, d, gl.wo.data_mut(), gl.bo.data_mut(), Some(&mut dctx));
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); rows * d];
        let mut dv = vec![T::zero(); rows * d];
        attention_backward(&lt.q, &lt.k, &lt.v, &lt.probs, &dctx, batch, seq, d, config.heads, &mut dq, &mut dk, &mut dv);
        let mut dattn_in = vec![T::zero(); rows * d];
        linear_backward(&lt.attn_in, lp.wq.data(), &dq, rows, d, d, gl.wq.data_mut(), gl.bq.data_mut(), Some(&mut dattn_in));
        linear_backward(&lt.attn_in, lp.wk.data(), &dk, rows, d, d, gl.wk.data_mut(), gl.bk.data_mut(), Some(&mut dattn_in));
        linear_backward(&lt.attn_in, lp.wv.data(), &dv, rows, d, d, gl.wv.data_mut(), gl.bv.data_mut(), Some(&mut dattn_in));
        layer_norm_rows_backward(
            &dattn_in,
            &lt.attn_norm.xhat,
            &lt.attn_norm.inv_std,
            lp.attn_norm_gain.data(),
            d,
            &mut dh,
            gl.attn_norm_gain.data_mut(),
            gl.attn_norm_bias.data_mut(),
        );
        debug_assert_eq!(lt.input.len(), dh.len());
    }

    if let Some(m) = &tape.embed_mask {
        mul_in_place(&mut dh, m);
    }
    linear_backward(
        &tape.input,
        params.input_weight.data(),
        &dh,
        rows,
        config.input_dim,
        d,
        g.input_weight.data_mut(),
        g.input_bias.data_mut(),
        None,
    );
    Ok(g)
}

/// Encoder hidden states (`seq x model_dim`, after the final norm) of one
/// sequence in eval mode.
pub fn encoder_forward<T: Scalar>(
    feat: &FeatureSequence,
    params: &ParamStore<T>,
    config: &EncoderConfig,
) -> Result<Vec<T>> {
    let (x, seq) = stack_batch::<T>(&[feat], config)?;
    let out = forward(params, config, x, 1, seq, Mode::Eval, 0)?;
    let d = config.model_dim;
    let NormCache { xhat, .. } = &out.tape.final_norm;
    let gain = params.final_norm_gain.data();
    let bias = params.final_norm_bias.data();
    Ok(xhat
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(gain).zip(bias).map(|((&x, &g), &b)| x * g + b))
        .collect())
}

/// Single-clip forward: probabilities plus tape.
pub fn model_forward<T: Scalar>(
    feat: &FeatureSequence,
    params: &ParamStore<T>,
    config: &EncoderConfig,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<T>, Tape<T>)> {
    let (x, seq) = stack_batch::<T>(&[feat], config)?;
    let mut out = forward(params, config, x, 1, seq, mode, seed)?;
    Ok((out.probs.swap_remove(0), out.tape))
}

/// Single-clip gradient of `-ln p[label]`.
pub fn model_backward<T: Scalar>(
    params: &ParamStore<T>,
    config: &EncoderConfig,
    tape: &mut Tape<T>,
    label: usize,
) -> Result<GradStore<T>> {
    backward(params, config, tape, &[label])
}

/// Eval-mode output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f32>,
    /// Mean-pooled encoder output.
    pub embedding: Vec<f32>,
}

impl Prediction {
    /// Argmax of `probs`, lowest index on ties.
    pub fn category(&self) -> usize {
        super::argmax(&self.probs)
    }
}

const PREDICT_CHUNK: usize = 32;

/// Eval-mode predictions for many clips, in input order. Consecutive clips
/// of equal length are batched in fixed-size chunks, and chunks run in
/// parallel; the chunking does not depend on the thread count.
pub fn predict_batch(
    params: &ParamStore,
    config: &EncoderConfig,
    feats: &[&FeatureSequence],
) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    let mut chunks: Vec<&[&FeatureSequence]> = Vec::new();
    let mut start = 0;
    for i in 1..=feats.len() {
        if i == feats.len() || feats[i].len() != feats[start].len() || i - start == PREDICT_CHUNK {
            if i > start {
                chunks.push(&feats[start..i]);
            }
            start = i;
        }
    }
    let results: Vec<Result<Vec<Prediction>>> = chunks
        .par_iter()
        .map(|chunk| {
            let (x, seq) = stack_batch::<f32>(chunk, config)?;
            let out = forward(params, config, x, chunk.len(), seq, Mode::Eval, 0)?;
            Ok(out
                .probs
                .into_iter()
                .zip(out.pooled)
                .map(|(probs, embedding)| Prediction { probs, embedding })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(feats.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, layer_norm, mean_pool};
    use rand::Rng;

    fn tiny(layers: usize, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            input_dim: 12,
            model_dim: 16,
            layers,
            heads: 2,
            ffn_dim: 32,
            dropout_rate: dropout,
            max_positions: 64,
            num_categories: 4,
        }
    }

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn feat(len: usize, dim: usize, seed: u64) -> FeatureSequence {
        let x = random_input(len * dim, seed).into_iter().map(|v| v as f32).collect();
        FeatureSequence::new(x, len, dim, 6.25).unwrap()
    }

    fn loss_at(p: &ParamStore<f64>, cfg: &EncoderConfig, x: &[f64], b: usize, t: usize, labels: &[usize]) -> f64 {
        let out = forward(p, cfg, x.to_vec(), b, t, Mode::Train, 11).unwrap();
        batch_loss(&out.tape, labels)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny(2, 0.1);
        let (b, t) = (2, 8);
        let mut p: ParamStore<f64> = init_params(&cfg, 5).unwrap();
        // nonzero biases and gains so their gradient paths are exercised
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (_, tensor) in p.named_mut() {
            if tensor.rank() == 1 {
                tensor.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
            }
        }
        // the head starts at zero, which would hide every encoder gradient
        p.head_weight.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let x = random_input(b * t * cfg.input_dim, 7);
        let labels = [1, 3];
        let mut out = forward(&p, &cfg, x.clone(), b, t, Mode::Train, 11).unwrap();
        let g = backward(&p, &cfg, &mut out.tape, &labels).unwrap();
        let eps = 1e-3;
        let mut worst = 0.0f64;
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            let n = p.named()[ti].1.numel();
            for i in 0..n {
                let orig = p.named()[ti].1.data()[i];
                p.named_mut()[ti].1.data_mut()[i] = orig + eps;
                let up = loss_at(&p, &cfg, &x, b, t, &labels);
                p.named_mut()[ti].1.data_mut()[i] = orig - eps;
                let down = loss_at(&p, &cfg, &x, b, t, &labels);
                p.named_mut()[ti].1.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = g.named()[ti].1.data()[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(rel <= 1e-3, "{name}[{i}]: analytic {analytic} numeric {numeric}");
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-3);
    }

    #[test]
    fn logit_gradient_is_p_minus_onehot() {
        let cfg = tiny(1, 0.0);
        let p: ParamStore<f64> = init_params(&cfg, 1).unwrap();
        let f = feat(5, 12, 2);
        let (probs, mut tape) = model_forward(&f, &p, &cfg, Mode::Train, 0).unwrap();
        let g = model_backward(&p, &cfg, &mut tape, 2).unwrap();
        for k in 0..4 {
            let expected = probs[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((g.head_bias.data()[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let cfg = tiny(1, 0.1);
        let p: ParamStore = init_params(&cfg, 1).unwrap();
        let (_, mut tape) = model_forward(&feat(4, 12, 0), &p, &cfg, Mode::Train, 0).unwrap();
        model_backward(&p, &cfg, &mut tape, 0).unwrap();
        assert!(matches!(model_backward(&p, &cfg, &mut tape, 0), Err(Error::StaleTape)));
    }

    #[test]
    fn empty_stack_is_norm_of_embedding() {
        let cfg = tiny(0, 0.0);
        let p: ParamStore<f64> = init_params(&cfg, 3).unwrap();
        let f = feat(3, 12, 4);
        let h = encoder_forward(&f, &p, &cfg).unwrap();
        let pe = positional_encoding::<f64>(3, 16);
        for t in 0..3 {
            let row: Vec<f64> = (0..16)
                .map(|j| {
                    p.input_bias.data()[j]
                        + pe[t * 16 + j]
                        + (0..12)
                            .map(|i| f.frame(t)[i] as f64 * p.input_weight.data()[i * 16 + j])
                            .sum::<f64>()
                })
                .collect();
            let expected = layer_norm(&row, p.final_norm_gain.data(), p.final_norm_bias.data());
            for j in 0..16 {
                assert!((h[t * 16 + j] - expected[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shapes_and_simplex_for_many_lengths() {
        let cfg = tiny(2, 0.1);
        let p: ParamStore = init_params(&cfg, 9).unwrap();
        for len in [1, 2, 7, 17, 83, 100] {
            let f = feat(len, 12, len as u64);
            assert_eq!(encoder_forward(&f, &p, &cfg).unwrap().len(), len * 16);
            let (probs, _) = model_forward(&f, &p, &cfg, Mode::Eval, 0).unwrap();
            assert_eq!(probs.len(), 4);
            assert!(probs.iter().all(|&q| q >= 0.0));
            assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_is_deterministic_and_pooled_matches_hidden() {
        let cfg = tiny(2, 0.3);
        let p: ParamStore = init_params(&cfg, 2).unwrap();
        let f = feat(9, 12, 1);
        let (x, t) = stack_batch::<f32>(&[&f], &cfg).unwrap();
        let a = forward(&p, &cfg, x.clone(), 1, t, Mode::Eval, 1).unwrap();
        let b = forward(&p, &cfg, x, 1, t, Mode::Eval, 2).unwrap();
        assert_eq!(a.probs, b.probs);
        let h = encoder_forward(&f, &p, &cfg).unwrap();
        assert_eq!(mean_pool(&h, 16).unwrap(), a.pooled[0]);
    }

    #[test]
    fn batched_forward_matches_single() {
        let cfg = tiny(2, 0.0);
        let p: ParamStore<f64> = init_params(&cfg, 4).unwrap();
        let fs: Vec<FeatureSequence> = (0..3).map(|s| feat(6, 12, s)).collect();
        let refs: Vec<&FeatureSequence> = fs.iter().collect();
        let (x, t) = stack_batch::<f64>(&refs, &cfg).unwrap();
        let batched = forward(&p, &cfg, x, 3, t, Mode::Eval, 0).unwrap();
        for (i, f) in fs.iter().enumerate() {
            let (single, _) = model_forward(f, &p, &cfg, Mode::Eval, 0).unwrap();
            for (a, b) in single.iter().zip(&batched.probs[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_is_reproducible_and_unbiased() {
        let cfg = tiny(0, 0.2);
        let p: ParamStore<f64> = init_params(&cfg, 8).unwrap();
        let f = feat(2, 12, 3);
        let (x, t) = stack_batch::<f64>(&[&f], &cfg).unwrap();
        let a = forward(&p, &cfg, x.clone(), 1, t, Mode::Train, 5).unwrap();
        let b = forward(&p, &cfg, x.clone(), 1, t, Mode::Train, 5).unwrap();
        assert_eq!(a.probs, b.probs);
        // masks average to one per element, so masked embeddings average to
        // the eval-mode embedding
        let draws = 4000;
        let n = 2 * 16;
        let mut mean = vec![0.0; n];
        for s in 0..draws {
            let m: Vec<f64> = dropout_mask(n, 0.2, &mut ChaCha8Rng::seed_from_u64(s));
            mean.iter_mut().zip(&m).for_each(|(acc, &v)| *acc += v / draws as f64);
        }
        assert!(mean.iter().all(|&m| (m - 1.0).abs() <= 0.05), "{mean:?}");
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = tiny(1, 0.0);
        let p: ParamStore = init_params(&cfg, 0).unwrap();
        assert!(matches!(
            model_forward(&feat(4, 11, 0), &p, &cfg, Mode::Eval, 0),
            Err(Error::Shape(_))
        ));
        let (_, mut tape) = model_forward(&feat(4, 12, 0), &p, &cfg, Mode::Train, 0).unwrap();
        assert!(matches!(model_backward(&p, &cfg, &mut tape, 4), Err(Error::Index { .. })));
    }
}
