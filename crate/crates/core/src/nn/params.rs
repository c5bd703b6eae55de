use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Encoder and head hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature dimension after LFR stacking.
    pub input_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
    pub num_categories: usize,
}

impl EncoderConfig {
    /// CPU-sized default: 4 layers, width 128, 4 heads.
    pub fn desk(input_dim: usize, num_categories: usize) -> Self {
        Self {
            input_dim,
            model_dim: 128,
            layers: 4,
            heads: 4,
            ffn_dim: 512,
            dropout_rate: 0.1,
            max_positions: 2048,
            num_categories,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.model_dim,
            self.heads,
            self.ffn_dim,
            self.max_positions,
            self.num_categories,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero dimension in {self:?}")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Same encoder shape; head size and dropout may differ.
    pub fn encoder_compatible(&self, other: &EncoderConfig) -> bool {
        self.input_dim == other.input_dim
            && self.model_dim == other.model_dim
            && self.layers == other.layers
            && self.heads == other.heads
            && self.ffn_dim == other.ffn_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub attn_norm_gain: Tensor<T>,
    pub attn_norm_bias: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ffn_norm_gain: Tensor<T>,
    pub ffn_norm_bias: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// All trainable tensors. Linear weights are stored `in x out` except the
/// head, which is `categories x model_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    pub input_weight: Tensor<T>,
    pub input_bias: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm_gain: Tensor<T>,
    pub final_norm_bias: Tensor<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Gradients share the parameter layout.
pub type GradStore<T = f32> = ParamStore<T>;

macro_rules! layer_fields {
    ($mac:ident) => {
        $mac!(
            (attn_norm_gain, "attn_norm.gain"),
            (attn_norm_bias, "attn_norm.bias"),
            (wq, "attn.q.weight"),
            (bq, "attn.q.bias"),
            (wk, "attn.k.weight"),
            (bk, "attn.k.bias"),
            (wv, "attn.v.weight"),
            (bv, "attn.v.bias"),
            (wo, "attn.out.weight"),
            (bo, "attn.out.bias"),
            (ffn_norm_gain, "ffn_norm.gain"),
            (ffn_norm_bias, "ffn_norm.bias"),
            (w1, "ffn.in.weight"),
            (b1, "ffn.in.bias"),
            (w2, "ffn.out.weight"),
            (b2, "ffn.out.bias")
        )
    };
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(cfg: &EncoderConfig) -> Self {
        let (d, f) = (cfg.model_dim, cfg.ffn_dim);
        Self {
            attn_norm_gain: Tensor::full(&[d], T::one()),
            attn_norm_bias: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ffn_norm_gain: Tensor::full(&[d], T::one()),
            ffn_norm_bias: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        macro_rules! collect {
            ($(($f:ident, $n:literal)),*) => { vec![$((format!("{prefix}{}", $n), &self.$f)),*] };
        }
        layer_fields!(collect)
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        macro_rules! collect {
            ($(($f:ident, $n:literal)),*) => { vec![$((format!("{prefix}{}", $n), &mut self.$f)),*] };
        }
        layer_fields!(collect)
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Gains one, everything else zero.
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            input_weight: Tensor::zeros(&[cfg.input_dim, d]),
            input_bias: Tensor::zeros(&[d]),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_norm_gain: Tensor::full(&[d], T::one()),
            final_norm_bias: Tensor::zeros(&[d]),
            head_weight: Tensor::zeros(&[cfg.num_categories, d]),
            head_bias: Tensor::zeros(&[cfg.num_categories]),
        }
    }

    /// Same layout, all zeros (gains included). Used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Canonical order: input projection, layers, final norm, head.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("input.weight".to_string(), &self.input_weight),
            ("input.bias".to_string(), &self.input_bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named(&format!("layers.{i}.")));
        }
        out.push(("final_norm.gain".into(), &self.final_norm_gain));
        out.push(("final_norm.bias".into(), &self.final_norm_bias));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("input.weight".to_string(), &mut self.input_weight),
            ("input.bias".to_string(), &mut self.input_bias),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.named_mut(&format!("layers.{i}.")));
        }
        out.push(("final_norm.gain".into(), &mut self.final_norm_gain));
        out.push(("final_norm.bias".into(), &mut self.final_norm_bias));
        out.push(("head.weight".into(), &mut self.head_weight));
        out.push(("head.bias".into(), &mut self.head_bias));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in self.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
    }

    /// Check every tensor's shape against `cfg`.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = ParamStore::<T>::zeros(cfg);
        let ours = self.named();
        let theirs = expected.named();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "{} tensors, config implies {}",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "`{name}` has shape {:?}, config implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::<U> {
            input_weight: self.input_weight.cast(),
            input_bias: self.input_bias.cast(),
            layers: Vec::new(),
            final_norm_gain: self.final_norm_gain.cast(),
            final_norm_bias: self.final_norm_bias.cast(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        };
        for l in &self.layers {
            macro_rules! cast_layer {
                ($(($f:ident, $n:literal)),*) => { LayerParams { $($f: l.$f.cast()),* } };
            }
            out.layers.push(layer_fields!(cast_layer));
        }
        out
    }
}

/// Whether a parameter belongs to the classification head.
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("head.")
}

/// Glorot-uniform encoder matrices, zero biases, unit norm gains. The head
/// starts at zero so an untrained model outputs the uniform distribution.
pub fn init_params<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut params = ParamStore::<T>::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in params.named_mut() {
        if t.rank() == 2 && !is_head_param(&name) {
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for v in t.data_mut() {
                *v = T::of(rng.random_range(-limit..limit));
            }
        }
    }
    Ok(params)
}

/// Fresh zero head for `cfg.num_categories`, as [`init_params`] makes it.
pub fn init_head<T: Scalar>(cfg: &EncoderConfig) -> (Tensor<T>, Tensor<T>) {
    (
        Tensor::zeros(&[cfg.num_categories, cfg.model_dim]),
        Tensor::zeros(&[cfg.num_categories]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_dim: 12,
            model_dim: 16,
            layers: 2,
            heads: 2,
            ffn_dim: 24,
            dropout_rate: 0.1,
            max_positions: 64,
            num_categories: 4,
        }
    }

    #[test]
    fn init_conventions() {
        let p: ParamStore = init_params(&tiny(), 3).unwrap();
        assert_eq!(p, init_params(&tiny(), 3).unwrap());
        assert_ne!(p, init_params(&tiny(), 4).unwrap());
        assert!(p.final_norm_gain.data().iter().all(|&g| g == 1.0));
        assert!(p.layers[1].ffn_norm_gain.data().iter().all(|&g| g == 1.0));
        assert!(p.head_bias.data().iter().all(|&b| b == 0.0));
        assert!(p.layers[0].b1.data().iter().all(|&b| b == 0.0));
        let limit = (6.0f32 / (16.0 + 24.0)).sqrt();
        assert!(p.layers[0].w1.data().iter().all(|w| w.abs() <= limit));
        assert_eq!(p.head_weight.shape(), &[4, 16]);
        assert!(p.head_weight.data().iter().all(|&w| w == 0.0));
        assert!(p.input_weight.data().iter().any(|&w| w != 0.0));
        p.check_shapes(&tiny()).unwrap();
    }

    #[test]
    fn names_are_unique() {
        let p: ParamStore = init_params(&tiny(), 0).unwrap();
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.len(), 2 + 16 * 2 + 4);
        assert_eq!(names[2], "layers.0.attn_norm.gain");
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig { heads: 3, ..tiny() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { dropout_rate: 1.0, ..tiny() };
        assert!(bad.validate().is_err());
        let mut other = tiny();
        other.num_categories = 7;
        assert!(tiny().encoder_compatible(&other));
        other.layers = 3;
        assert!(!tiny().encoder_compatible(&other));
    }

    #[test]
    fn shape_check_catches_mismatch() {
        let p: ParamStore = init_params(&tiny(), 0).unwrap();
        let other = EncoderConfig { num_categories: 5, ..tiny() };
        assert!(matches!(p.check_shapes(&other), Err(Error::Shape(_))));
    }
}
