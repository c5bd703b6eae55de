use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint_io::{decode_tensors, encode_tensors};
use crate::nn::{ParamStore, Scalar};

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One AdamW update of a flat tensor at (already incremented) step `t`.
/// Arithmetic is done in f64.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
) {
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.f64();
        let m_new = b1 * m.f64() + (1.0 - b1) * g;
        let v_new = b2 * v.f64() + (1.0 - b2) * g * g;
        let m_hat = m_new / c1;
        let v_hat = v_new / c2;
        let x = p.f64();
        *p = T::of(x - lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * x));
        *m = T::of(m_new);
        *v = T::of(v_new);
    }
}

/// AdamW over every tensor for which `trainable(name)` holds. Weight decay
/// touches rank-2 tensors only. Gradients are checked for finiteness before
/// anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    config: &TrainConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<()> {
    for (name, g) in grads.named() {
        if trainable(&name) && !g.is_finite() {
            return Err(Error::NonFinite { name: format!("gradient of {name}") });
        }
    }
    state.t += 1;
    let grads = grads.named();
    let mut m = state.m.named_mut();
    let mut v = state.v.named_mut();
    for (i, (name, p)) in params.named_mut().into_iter().enumerate() {
        if !trainable(&name) {
            continue;
        }
        let wd = if p.rank() == 2 { config.weight_decay } else { 0.0 };
        adamw_update(
            p.data_mut(),
            grads[i].1.data(),
            m[i].1.data_mut(),
            v[i].1.data_mut(),
            state.t,
            lr,
            config.betas,
            config.eps,
            wd,
        );
    }
    Ok(())
}

const STATE_MAGIC: &[u8; 8] = b"UATROPTS";
const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateHeader {
    step: u64,
    names: Vec<String>,
}

impl OptimizerState<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors = self.m.named();
        tensors.extend(self.v.named());
        let header = StateHeader {
            step: self.t,
            names: self.m.named().into_iter().map(|(n, _)| n).collect(),
        };
        let bytes = encode_tensors(STATE_MAGIC, STATE_VERSION, &header, &tensors)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Load moments laid out like `params`.
    pub fn load(path: impl AsRef<Path>, params: &ParamStore) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, payload) = decode_tensors(STATE_MAGIC, STATE_VERSION, &bytes)?;
        let header: StateHeader = serde_json::from_slice(header)?;
        let mut state = OptimizerState::new(params);
        state.t = header.step;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if header.names != names || payload.len() != 2 * params.num_parameters() {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        let mut at = 0;
        for store in [&mut state.m, &mut state.v] {
            for (_, t) in store.named_mut() {
                let n = t.numel();
                t.data_mut().copy_from_slice(&payload[at..at + n]);
                at += n;
            }
        }
        Ok(state)
    }
}
