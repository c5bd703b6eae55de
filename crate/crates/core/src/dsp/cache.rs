//! On-disk feature cache: `UATRFEAT` magic, version, frame count, dimension,
//! frame rate and the config hash, followed by row-major little-endian f32.

use std::fs;
use std::path::Path;

use super::FeatureSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UATRFEAT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 32;

pub fn write_feature_cache(path: impl AsRef<Path>, feat: &FeatureSequence, config_hash: &str) -> Result<()> {
    let path = path.as_ref();
    let hash = hex::decode(config_hash)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| Error::Config(format!("bad config hash `{config_hash}`")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + feat.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(feat.len() as u32).to_le_bytes());
    out.extend_from_slice(&(feat.dim() as u32).to_le_bytes());
    out.extend_from_slice(&feat.frame_rate().to_le_bytes());
    out.extend_from_slice(&hash);
    for v in feat.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a cached sequence; fails if it was produced under another config.
pub fn read_feature_cache(path: impl AsRef<Path>, config_hash: &str) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::CorruptFile(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("not a feature cache file"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(corrupt("unsupported version"));
    }
    let len = u32_at(12) as usize;
    let dim = u32_at(16) as usize;
    let rate = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if hex::encode(&bytes[28..60]) != config_hash {
        return Err(Error::Config(format!(
            "{} was computed with a different feature config",
            path.display()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len * dim * 4 {
        return Err(corrupt("payload length mismatch"));
    }
    let frames = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(frames, len, dim, rate)
}
