//! Speech-style acoustic front end: log-Mel filterbank energies, low frame
//! rate (LFR) stacking and per-utterance mean/variance normalization.

mod batch;
mod cache;
mod features;
mod mel;

pub use batch::featurize_records;
pub use cache::{read_feature_cache, write_feature_cache};
pub use features::{featurize, lfr_stack, log_mel, utterance_normalize, Featurizer, FeatureSequence};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, Filterbank};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub win_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
    pub lfr_m: usize,
    pub lfr_n: usize,
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            win_samples: 400,
            hop_samples: 160,
            fft_size: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
            lfr_m: 7,
            lfr_n: 6,
            normalize: true,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.win_samples == 0 || self.hop_samples == 0 || self.n_mels == 0 {
            return fail("window, hop and mel count must be positive".into());
        }
        if self.win_samples > self.fft_size {
            return fail(format!(
                "window of {} samples exceeds FFT size {}",
                self.win_samples, self.fft_size
            ));
        }
        if self.hop_samples > self.win_samples {
            return fail(format!(
                "hop {} longer than window {}",
                self.hop_samples, self.win_samples
            ));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= sample_rate as f64 / 2.0)
        {
            return fail(format!(
                "need 0 <= f_min < f_max <= {} Hz, got {}..{}",
                sample_rate as f64 / 2.0,
                self.f_min,
                self.f_max
            ));
        }
        if !(self.log_floor > 0.0) {
            return fail("log floor must be positive".into());
        }
        if self.lfr_m == 0 || self.lfr_n == 0 {
            return fail("LFR factors must be at least 1".into());
        }
        Ok(())
    }

    /// Feature dimension after stacking.
    pub fn output_dim(&self) -> usize {
        self.n_mels * self.lfr_m
    }

    /// Mel frames for `len` samples (0 if shorter than a window).
    pub fn mel_frames(&self, len: usize) -> usize {
        if len < self.win_samples {
            0
        } else {
            1 + (len - self.win_samples) / self.hop_samples
        }
    }

    /// Encoder frames for `len` samples.
    pub fn output_frames(&self, len: usize) -> usize {
        self.mel_frames(len).div_ceil(self.lfr_n)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
