//! Audio input: WAV decoding, resampling, clip segmentation and dataset
//! manifests.

mod loader;
mod manifest;
mod resample;
mod wav;

pub use loader::ClipLoader;
pub use manifest::{
    build_manifest, build_manifest_at_rate, discover_sources, CategoryMap, ClipRecord,
    DatasetManifest, SourceFile, Split, SplitRatios, LABEL_INDEX, MANIFEST_SCHEMA_VERSION,
    TARGET_SAMPLE_RATE,
};
pub use resample::{resample, Resampler};
pub use wav::{decode_wav, encode_wav, probe_wav, read_wav, write_wav, WavInfo, WavSampleFormat};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("audio sample {i}"),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `len` samples starting at `offset`.
    pub fn slice(&self, offset: usize, len: usize) -> Result<AudioBuffer> {
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| {
                Error::Shape(format!(
                    "slice {offset}..{} outside buffer of {} samples",
                    offset.saturating_add(len),
                    self.samples.len()
                ))
            })?;
        Ok(AudioBuffer {
            samples: self.samples[offset..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Number of samples in a clip of `clip_seconds` at `sample_rate`, which must
/// come out as a positive integer.
pub fn clip_samples(sample_rate: u32, clip_seconds: f64) -> Result<usize> {
    let exact = sample_rate as f64 * clip_seconds;
    let rounded = exact.round();
    if !exact.is_finite() || rounded < 1.0 || (exact - rounded).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{clip_seconds} s at {sample_rate} Hz is not a positive whole number of samples"
        )));
    }
    Ok(rounded as usize)
}

/// Cut `buf` into consecutive non-overlapping clips of `clip_seconds`.
/// The trailing remainder shorter than one clip is dropped.
pub fn segment(buf: &AudioBuffer, clip_seconds: f64) -> Result<Vec<AudioBuffer>> {
    let n = clip_samples(buf.sample_rate, clip_seconds)?;
    Ok(buf
        .samples
        .chunks_exact(n)
        .map(|chunk| AudioBuffer {
            samples: chunk.to_vec(),
            sample_rate: buf.sample_rate,
        })
        .collect())
}
