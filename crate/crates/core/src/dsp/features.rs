use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{mel_filterbank, Filterbank, MelConfig};
use crate::error::{Error, Result};
use crate::ingest::AudioBuffer;

/// Time-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f32>,
    len: usize,
    dim: usize,
    frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f32>, len: usize, dim: usize, frame_rate: f64) -> Result<Self> {
        if frames.len() != len * dim {
            return Err(Error::Shape(format!(
                "{} values for {len} frames of dimension {dim}",
                frames.len()
            )));
        }
        if dim == 0 {
            return Err(Error::Shape("zero feature dimension".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: "feature frames".into(),
            });
        }
        Ok(Self {
            frames,
            len,
            dim,
            frame_rate,
        })
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.frames
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }
}

/// Filterbank, window and FFT plan for one (config, sample rate) pair.
/// Immutable; share freely across threads.
pub struct Featurizer {
    config: MelConfig,
    sample_rate: u32,
    window: Vec<f64>,
    bank: Filterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .finish_non_exhaustive()
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

impl Featurizer {
    pub fn new(config: &MelConfig, sample_rate: u32) -> Result<Self> {
        let bank = mel_filterbank(config, sample_rate)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config: config.clone(),
            sample_rate,
            window: hamming(config.win_samples),
            bank,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.bank
    }

    /// One-sided `|X_k|^2`, k = 0..=fft_size/2, of a frame that is windowed
    /// and zero padded here.
    pub fn power_spectrum(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        for (i, (&x, &w)) in frame.iter().zip(&self.window).enumerate() {
            buf[i].re = x as f64 * w;
        }
        self.fft.process(&mut buf);
        buf[..self.bank.n_bins()].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Pre-log mel energies, `frames x n_mels`.
    pub fn mel_energies(&self, buf: &AudioBuffer) -> Result<Vec<Vec<f64>>> {
        self.check_input(buf)?;
        let cfg = &self.config;
        let n = cfg.mel_frames(buf.len());
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let start = t * cfg.hop_samples;
            let power = self.power_spectrum(&buf.samples()[start..start + cfg.win_samples]);
            let mut e = vec![0.0; cfg.n_mels];
            self.bank.apply(&power, &mut e);
            out.push(e);
        }
        Ok(out)
    }

    fn check_input(&self, buf: &AudioBuffer) -> Result<()> {
        if buf.sample_rate() != self.sample_rate {
            return Err(Error::Config(format!(
                "featurizer built for {} Hz, got {} Hz audio",
                self.sample_rate,
                buf.sample_rate()
            )));
        }
        if buf.len() < self.config.win_samples {
            return Err(Error::TooShort {
                needed: self.config.win_samples,
                got: buf.len(),
            });
        }
        Ok(())
    }

    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<FeatureSequence> {
        let energies = self.mel_energies(buf)?;
        let floor = self.config.log_floor;
        let frames = energies
            .iter()
            .flat_map(|e| e.iter().map(move |&v| v.max(floor).ln() as f32))
            .collect();
        FeatureSequence::new(
            frames,
            energies.len(),
            self.config.n_mels,
            self.sample_rate as f64 / self.config.hop_samples as f64,
        )
    }

    pub fn featurize(&self, buf: &AudioBuffer) -> Result<FeatureSequence> {
        let stacked = lfr_stack(&self.log_mel(buf)?, self.config.lfr_m, self.config.lfr_n)?;
        if self.config.normalize {
            utterance_normalize(&stacked)
        } else {
            Ok(stacked)
        }
    }
}

pub fn log_mel(buf: &AudioBuffer, config: &MelConfig) -> Result<FeatureSequence> {
    Featurizer::new(config, buf.sample_rate())?.log_mel(buf)
}

/// Stack `m` consecutive frames starting at every `n`-th frame. Indices past
/// the end repeat the last frame.
pub fn lfr_stack(feat: &FeatureSequence, m: usize, n: usize) -> Result<FeatureSequence> {
    if feat.is_empty() {
        return Err(Error::EmptySequence);
    }
    if m == 0 || n == 0 {
        return Err(Error::Config("LFR factors must be at least 1".into()));
    }
    let t_in = feat.len();
    let t_out = t_in.div_ceil(n);
    let mut frames = Vec::with_capacity(t_out * m * feat.dim());
    for t in 0..t_out {
        for j in 0..m {
            frames.extend_from_slice(feat.frame((t * n + j).min(t_in - 1)));
        }
    }
    FeatureSequence::new(frames, t_out, m * feat.dim(), feat.frame_rate() / n as f64)
}

/// Per-dimension standardization over time; the divisor is floored at 1e-5.
pub fn utterance_normalize(feat: &FeatureSequence) -> Result<FeatureSequence> {
    if feat.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (t_len, dim) = (feat.len(), feat.dim());
    let mut mean = vec![0.0f64; dim];
    for t in 0..t_len {
        for (m, &v) in mean.iter_mut().zip(feat.frame(t)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_len as f64);
    let mut var = vec![0.0f64; dim];
    for t in 0..t_len {
        for ((s, &v), &m) in var.iter_mut().zip(feat.frame(t)).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / t_len as f64).sqrt().max(1e-5))
        .collect();
    let mut frames = Vec::with_capacity(t_len * dim);
    for t in 0..t_len {
        for ((&v, &m), &k) in feat.frame(t).iter().zip(&mean).zip(&scale) {
            frames.push(((v as f64 - m) * k) as f32);
        }
    }
    FeatureSequence::new(frames, t_len, dim, feat.frame_rate())
}

/// log-Mel, then LFR stacking, then (optionally) normalization.
pub fn featurize(buf: &AudioBuffer, config: &MelConfig) -> Result<FeatureSequence> {
    Featurizer::new(config, buf.sample_rate())?.featurize(buf)
}
