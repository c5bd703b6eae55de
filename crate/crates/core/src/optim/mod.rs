//! Cross-entropy training with AdamW and a warmup/inverse-sqrt schedule.

mod adamw;
mod train;

pub use adamw::{adamw_step, adamw_update, OptimizerState};
pub use train::{
    train, train_on_features, EpochRecord, LabeledFeatures, LogRecord, StepRecord, TrainLog,
    TrainOutcome,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(probs: &[f32], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(Error::Index {
        index: label,
        len: probs.len(),
    })?;
    Ok(-(*p as f64).max(1e-12).ln())
}

/// Linear warmup to `base_lr` at `warmup_steps`, then inverse-sqrt decay.
pub fn warmup_lr(step: u64, base_lr: f64, warmup_steps: u64) -> Result<f64> {
    if step < 1 {
        return Err(Error::Config("learning-rate schedule starts at step 1".into()));
    }
    if warmup_steps < 1 {
        return Err(Error::Config("warmup_steps must be at least 1".into()));
    }
    let (s, w) = (step as f64, warmup_steps as f64);
    Ok(base_lr * (s / w).min((w / s).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Load an encoder checkpoint and update every parameter.
    FullFinetune,
    /// Load an encoder checkpoint and update the head only.
    HeadOnly,
    /// Random initialization.
    FromScratch,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::FullFinetune => "full_finetune",
            TrainMode::HeadOnly => "head_only",
            TrainMode::FromScratch => "from_scratch",
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_finetune" => Ok(TrainMode::FullFinetune),
            "head_only" => Ok(TrainMode::HeadOnly),
            "from_scratch" => Ok(TrainMode::FromScratch),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub mode: TrainMode,
    pub init_checkpoint: Option<PathBuf>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn deepship() -> Self {
        Self {
            batch_size: 60,
            base_lr: 2e-4,
            ..Self::desk()
        }
    }

    pub fn shipsear() -> Self {
        Self {
            batch_size: 10,
            base_lr: 4e-5,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            batch_size: 10,
            base_lr: 5e-4,
            warmup_steps: 500,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            epochs: 50,
            grad_clip_norm: Some(5.0),
            seed: 0,
            mode: TrainMode::FromScratch,
            init_checkpoint: None,
            patience: Some(10),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "deepship" => Ok(Self::deepship()),
            "shipsear" => Ok(Self::shipsear()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown training profile `{other}` (expected deepship, shipsear or desk)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != TrainMode::FromScratch && self.init_checkpoint.is_none() {
            return Err(Error::Config(format!("{} needs an init checkpoint", self.mode)));
        }
        self.validate_without_path()
    }

    /// Everything except the init-checkpoint requirement, for callers that
    /// hand over an in-memory checkpoint.
    pub(crate) fn validate_without_path(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.warmup_steps < 1 {
            return fail("warmup_steps must be at least 1".into());
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return fail(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return fail("eps must be positive and weight_decay nonnegative".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}
