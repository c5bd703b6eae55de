use std::path::PathBuf;
use std::sync::Arc;

use super::{read_wav, resample, AudioBuffer, ClipRecord, DatasetManifest};
use crate::error::{Error, Result};

/// Reads clips referenced by a manifest, resampling each source file once.
/// Keeps the most recently used file, so iterate records grouped by file.
#[derive(Debug)]
pub struct ClipLoader {
    root: PathBuf,
    sample_rate: u32,
    cached: Option<(String, Arc<AudioBuffer>)>,
}

impl ClipLoader {
    pub fn new(manifest: &DatasetManifest) -> Self {
        Self {
            root: PathBuf::from(&manifest.root),
            sample_rate: manifest.sample_rate,
            cached: None,
        }
    }

    /// Whole source file at the manifest sample rate.
    pub fn source(&mut self, file_id: &str) -> Result<Arc<AudioBuffer>> {
        if let Some((id, buf)) = &self.cached {
            if id == file_id {
                return Ok(buf.clone());
            }
        }
        let raw = read_wav(self.root.join(file_id))?;
        let buf = Arc::new(resample(&raw, self.sample_rate)?);
        self.cached = Some((file_id.to_string(), buf.clone()));
        Ok(buf)
    }

    pub fn clip(&mut self, record: &ClipRecord) -> Result<AudioBuffer> {
        let src = self.source(&record.source_file_id)?;
        src.slice(record.sample_offset, record.clip_samples)
            .map_err(|_| {
                Error::Manifest(format!(
                    "clip {} lies outside its source ({} samples)",
                    record.clip_id(),
                    src.len()
                ))
            })
    }
}
