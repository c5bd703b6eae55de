//! Binary checkpoint: magic, version, length-prefixed JSON header, raw
//! little-endian f32 payload, CRC-32 of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ParamStore, Tensor};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::ingest::CategoryMap;

const MAGIC: &[u8; 8] = b"UATRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub config: EncoderConfig,
    pub category_map: CategoryMap,
    /// Front end the weights were trained against, if known.
    pub features: Option<MelConfig>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    categories: CategoryMap,
    features: Option<MelConfig>,
    feature_hash: Option<String>,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// Encode named tensors behind a JSON header. Shared with the optimizer
/// state file.
pub(crate) fn encode_tensors<H: Serialize>(
    magic: &[u8; 8],
    version: u32,
    header: &H,
    tensors: &[(String, &Tensor)],
) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let total: usize = tensors.iter().map(|(_, t)| t.numel()).sum();
    let mut out = Vec::with_capacity(24 + header.len() + 4 * total + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let start = out.len();
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Split a file into (header JSON, payload floats), verifying magic,
/// version and checksum.
pub(crate) fn decode_tensors<'a>(magic: &[u8; 8], version: u32, bytes: &'a [u8]) -> Result<(&'a [u8], Vec<f32>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 24 || &bytes[..8] != magic {
        return Err(bad("bad magic"));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Checkpoint(format!("format version {found}, expected {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen + 4 {
        return Err(bad("truncated header"));
    }
    let header = &body[..hlen];
    let payload = &body[hlen..body.len() - 4];
    let stored = u32::from_le_bytes(body[body.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(bad("payload checksum mismatch"));
    }
    if !payload.len().is_multiple_of(4) {
        return Err(bad("payload is not a whole number of floats"));
    }
    let floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, floats))
}

/// Fill `store` from the index, requiring names and shapes to match exactly.
fn fill_store(store: &mut ParamStore, index: &[TensorEntry], payload: &[f32]) -> Result<()> {
    let mut slots = store.named_mut();
    if slots.len() != index.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors in file, configuration needs {}",
            index.len(),
            slots.len()
        )));
    }
    for ((name, t), e) in slots.iter_mut().zip(index) {
        if *name != e.name || t.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match expected `{name}` {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        let n = t.numel();
        let src = payload
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` runs past the payload")))?;
        t.data_mut().copy_from_slice(src);
    }
    Ok(())
}

fn index_of(store: &ParamStore) -> Vec<TensorEntry> {
    let mut offset = 0;
    store
        .named()
        .into_iter()
        .map(|(name, t)| {
            let e = TensorEntry { name, shape: t.shape().to_vec(), offset };
            offset += t.numel();
            e
        })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = Header {
            config: self.config.clone(),
            categories: self.category_map.clone(),
            features: self.features.clone(),
            feature_hash: self.features.as_ref().map(MelConfig::hash),
            metadata: self.metadata.clone(),
            tensors: index_of(&self.params),
        };
        encode_tensors(MAGIC, CHECKPOINT_VERSION, &header, &self.params.named())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = decode_tensors(MAGIC, CHECKPOINT_VERSION, bytes)?;
        let header: Header = serde_json::from_slice(header)
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let (Some(f), Some(h)) = (&header.features, &header.feature_hash) {
            if f.hash() != *h {
                return Err(Error::Checkpoint("feature configuration hash mismatch".into()));
            }
        }
        let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if expected != payload.len() {
            return Err(Error::Checkpoint(format!(
                "index describes {expected} values, payload holds {}",
                payload.len()
            )));
        }
        let mut params = ParamStore::zeros(&header.config);
        fill_store(&mut params, &header.tensors, &payload)?;
        let ckpt = Checkpoint {
            params,
            config: header.config,
            category_map: header.categories,
            features: header.features,
            metadata: header.metadata,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        if self.category_map.len() != self.config.num_categories {
            return Err(Error::Checkpoint(format!(
                "{} category names for a {}-way head",
                self.category_map.len(),
                self.config.num_categories
            )));
        }
        self.params
            .check_shapes(&self.config)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn save_checkpoint(
    params: &ParamStore,
    config: &EncoderConfig,
    category_map: &CategoryMap,
    metadata: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint {
        params: params.clone(),
        config: config.clone(),
        category_map: category_map.clone(),
        features: None,
        metadata: metadata.clone(),
    }
    .save(path)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ParamStore, EncoderConfig, CategoryMap, BTreeMap<String, String>)> {
    let c = Checkpoint::load(path)?;
    Ok((c.params, c.config, c.category_map, c.metadata))
}
