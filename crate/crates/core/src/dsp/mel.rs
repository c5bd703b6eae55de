use super::MelConfig;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    n_mels: usize,
    n_bins: usize,
    /// Row-major `n_mels x n_bins`.
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
    /// Nonzero bin range of each filter.
    support: Vec<(usize, usize)>,
}

impl Filterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Project a one-sided power spectrum onto the filters.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.support[m];
            let row = self.row(m);
            *o = (lo..hi).map(|k| row[k] * power[k]).sum();
        }
    }
}

pub fn mel_filterbank(config: &MelConfig, sample_rate: u32) -> Result<Filterbank> {
    config.validate(sample_rate)?;
    let n_bins = config.fft_size / 2 + 1;
    let n_mels = config.n_mels;
    let mel_lo = hz_to_mel(config.f_min);
    let mel_hi = hz_to_mel(config.f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / config.fft_size as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut support = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            *w = up.min(down).max(0.0);
        }
        let lo = row.iter().position(|&w| w > 0.0);
        let hi = row.iter().rposition(|&w| w > 0.0);
        match (lo, hi) {
            (Some(lo), Some(hi)) => support.push((lo, hi + 1)),
            _ => {
                return Err(Error::Config(format!(
                    "mel filter {m} ({center:.1} Hz) covers no FFT bin; reduce n_mels or raise fft_size"
                )))
            }
        }
    }
    Ok(Filterbank {
        n_mels,
        n_bins,
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
        support,
    })
}
