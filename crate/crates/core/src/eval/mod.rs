//! In-domain, variable-length and cross-domain evaluation, and embedding
//! export.

mod metrics;

pub use metrics::{compute_metrics, CategoryScore, ConfusionMatrix, EvalReport};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dsp::{featurize_records, FeatureSequence, Featurizer, MelConfig};
use crate::error::{Error, Result};
use crate::ingest::{clip_samples, AudioBuffer, CategoryMap, ClipRecord, DatasetManifest, Split};
use crate::nn::{argmax, predict_batch, Checkpoint, Prediction};

fn feature_config(ckpt: &Checkpoint) -> Result<&MelConfig> {
    ckpt.features
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint does not record its feature configuration".into()))
}

/// Classify one clip: (category index, probabilities, pooled embedding).
pub fn predict(ckpt: &Checkpoint, clip: &AudioBuffer) -> Result<(usize, Vec<f32>, Vec<f32>)> {
    let feat = Featurizer::new(feature_config(ckpt)?, clip.sample_rate())?.featurize(clip)?;
    let p = predict_batch(&ckpt.params, &ckpt.config, &[&feat])?.remove(0);
    Ok((p.category(), p.probs, p.embedding))
}

/// Predictions for `records` in order.
pub fn predict_records(ckpt: &Checkpoint, manifest: &DatasetManifest, records: &[ClipRecord]) -> Result<Vec<Prediction>> {
    let feats = featurize_records(manifest, records, feature_config(ckpt)?)?;
    let refs: Vec<&FeatureSequence> = feats.iter().collect();
    predict_batch(&ckpt.params, &ckpt.config, &refs)
}

fn check_same_categories(ckpt: &Checkpoint, manifest: &DatasetManifest) -> Result<()> {
    if ckpt.category_map.names() != manifest.category_map.names() {
        return Err(Error::Mapping(format!(
            "checkpoint categories {:?} differ from manifest categories {:?}",
            ckpt.category_map.names(),
            manifest.category_map.names()
        )));
    }
    Ok(())
}

fn report_for(ckpt: &Checkpoint, records: &[ClipRecord], preds: &[Prediction]) -> Result<EvalReport> {
    let truth: Vec<usize> = records.iter().map(|r| r.category).collect();
    let predicted: Vec<usize> = preds.iter().map(Prediction::category).collect();
    let confusion = ConfusionMatrix::from_pairs(ckpt.config.num_categories, &truth, &predicted)?;
    compute_metrics(&confusion, ckpt.category_map.names())
}

/// Score every clip of `split`.
pub fn eval_split(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    check_same_categories(ckpt, manifest)?;
    let records: Vec<ClipRecord> = manifest.split(split).cloned().collect();
    if records.is_empty() {
        return Err(Error::EmptyEvaluation(format!("{} split is empty", split.as_str())));
    }
    let preds = predict_records(ckpt, manifest, &records)?;
    let mut report = report_for(ckpt, &records, &preds)?;
    report.metadata.insert("protocol".into(), json!("in_domain"));
    report.metadata.insert("split".into(), json!(split.as_str()));
    report.metadata.insert("clip_seconds".into(), json!(manifest.clip_seconds));
    Ok(report)
}

/// A maximal run of back-to-back clips of one file within one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub source_file_id: String,
    pub category: usize,
    pub start: usize,
    pub end: usize,
}

/// Contiguous regions covered by the clips of `split`, in manifest order.
pub fn split_regions(manifest: &DatasetManifest, split: Split) -> Vec<Region> {
    let mut by_file: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in manifest.split(split) {
        let key = r.source_file_id.as_str();
        if !by_file.contains_key(key) {
            order.push(key);
        }
        by_file.entry(key).or_default().push(r);
    }
    let mut regions = Vec::new();
    for file in order {
        let mut clips = by_file.remove(file).unwrap_or_default();
        clips.sort_by_key(|r| r.sample_offset);
        let mut current: Option<Region> = None;
        for r in clips {
            match &mut current {
                Some(reg) if reg.end == r.sample_offset => reg.end += r.clip_samples,
                _ => {
                    regions.extend(current.take());
                    current = Some(Region {
                        source_file_id: r.source_file_id.clone(),
                        category: r.category,
                        start: r.sample_offset,
                        end: r.sample_offset + r.clip_samples,
                    });
                }
            }
        }
        regions.extend(current);
    }
    regions
}

/// Non-overlapping clips of `seconds` cut from each region; the remainder is
/// dropped. Returns the clips and the number of regions too short for one.
pub fn resegment(regions: &[Region], sample_rate: u32, seconds: f64, split: Split) -> Result<(Vec<ClipRecord>, usize)> {
    let n = clip_samples(sample_rate, seconds)?;
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut next_index: BTreeMap<&str, usize> = BTreeMap::new();
    for reg in regions {
        let k = (reg.end - reg.start) / n;
        if k == 0 {
            skipped += 1;
            continue;
        }
        let idx = next_index.entry(&reg.source_file_id).or_insert(0);
        for j in 0..k {
            out.push(ClipRecord {
                source_file_id: reg.source_file_id.clone(),
                clip_index: *idx,
                sample_offset: reg.start + j * n,
                clip_samples: n,
                category: reg.category,
                split,
            });
            *idx += 1;
        }
    }
    Ok((out, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarlenEntry {
    pub seconds: f64,
    pub clips: usize,
    pub skipped_regions: usize,
    /// `None` when no region was long enough.
    pub accuracy: Option<f64>,
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarlenReport {
    pub trained_clip_seconds: f64,
    pub entries: Vec<VarlenEntry>,
    pub warnings: Vec<String>,
}

impl VarlenReport {
    /// `length,accuracy` rows; absent lengths have an empty accuracy field.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("length_seconds,accuracy\n");
        for e in &self.entries {
            match e.accuracy {
                Some(a) => s.push_str(&format!("{},{a}\n", e.seconds)),
                None => s.push_str(&format!("{},\n", e.seconds)),
            }
        }
        s
    }
}

/// Zero-shot accuracy of an unchanged checkpoint on test-split audio
/// re-cut into clips of each requested length.
pub fn eval_varlen(ckpt: &Checkpoint, manifest: &DatasetManifest, lengths: &[f64]) -> Result<VarlenReport> {
    check_same_categories(ckpt, manifest)?;
    let regions = split_regions(manifest, Split::Test);
    if regions.is_empty() {
        return Err(Error::EmptyEvaluation("test split is empty".into()));
    }
    let mut report = VarlenReport {
        trained_clip_seconds: manifest.clip_seconds,
        entries: Vec::new(),
        warnings: Vec::new(),
    };
    for &seconds in lengths {
        let (records, skipped) = resegment(&regions, manifest.sample_rate, seconds, Split::Test)?;
        if records.is_empty() {
            let w = format!("no test region is at least {seconds} s long; length skipped");
            log::warn!("{w}");
            report.warnings.push(w);
            report.entries.push(VarlenEntry { seconds, clips: 0, skipped_regions: skipped, accuracy: None, report: None });
            continue;
        }
        let preds = predict_records(ckpt, manifest, &records)?;
        let mut r = report_for(ckpt, &records, &preds)?;
        r.metadata.insert("protocol".into(), json!("variable_length"));
        r.metadata.insert("clip_seconds".into(), json!(seconds));
        r.metadata.insert("skipped_regions".into(), json!(skipped));
        report.entries.push(VarlenEntry {
            seconds,
            clips: records.len(),
            skipped_regions: skipped,
            accuracy: Some(r.accuracy),
            report: Some(r),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    PerClip,
    PerFileMeanProb,
    PerFileMajority,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_clip" | "clip" => Ok(Aggregation::PerClip),
            "per_file_mean_prob" | "mean_prob" => Ok(Aggregation::PerFileMeanProb),
            "per_file_majority" | "majority" => Ok(Aggregation::PerFileMajority),
            other => Err(Error::Config(format!(
                "unknown aggregation `{other}` (expected per_clip, mean_prob or majority)"
            ))),
        }
    }
}

/// Target category name to source category name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainMapping {
    pub pairs: BTreeMap<String, String>,
}

impl DomainMapping {
    /// Parse `target=source[,target=source...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (t, s) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("mapping entry `{item}` is not target=source")))?;
            pairs.insert(t.trim().to_string(), s.trim().to_string());
        }
        if pairs.is_empty() {
            return Err(Error::Config("empty domain mapping".into()));
        }
        Ok(Self { pairs })
    }

    /// Source index for each target category index (`None` if unmapped).
    pub fn resolve(&self, target: &CategoryMap, source: &CategoryMap) -> Result<Vec<Option<usize>>> {
        let mut out = vec![None; target.len()];
        for (t, s) in &self.pairs {
            let ti = target
                .index_of(t)
                .ok_or_else(|| Error::Mapping(format!("`{t}` is not a target category")))?;
            let si = source
                .index_of(s)
                .ok_or_else(|| Error::Mapping(format!("`{s}` is not a source category")))?;
            out[ti] = Some(si);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub clip: EvalReport,
    /// Per-file decisions; absent for [`Aggregation::PerClip`].
    pub file: Option<EvalReport>,
}

/// Score clip- and file-level predictions over source categories.
/// `mapped[i]` is the expected source category of clip `i`.
pub fn crossdomain_from_predictions(
    file_ids: &[String],
    mapped: &[usize],
    probs: &[Vec<f32>],
    aggregation: Aggregation,
    source_names: &[String],
) -> Result<CrossDomainReport> {
    let c = source_names.len();
    if file_ids.len() != mapped.len() || probs.len() != mapped.len() {
        return Err(Error::Shape("clip ids, targets and probabilities differ in length".into()));
    }
    if mapped.is_empty() {
        return Err(Error::EmptyEvaluation("no target clips".into()));
    }
    if let Some(p) = probs.iter().find(|p| p.len() != c) {
        return Err(Error::Shape(format!("{} probabilities for {c} source categories", p.len())));
    }
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let mut clip = compute_metrics(&ConfusionMatrix::from_pairs(c, mapped, &predicted)?, source_names)?;
    clip.metadata.insert("protocol".into(), json!("cross_domain"));
    clip.metadata.insert("level".into(), json!("clip"));

    let file = if aggregation == Aggregation::PerClip {
        None
    } else {
        let mut order: Vec<&str> = Vec::new();
        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, f) in file_ids.iter().enumerate() {
            if !members.contains_key(f.as_str()) {
                order.push(f);
            }
            members.entry(f).or_default().push(i);
        }
        let mut confusion = ConfusionMatrix::new(c);
        for f in order {
            let idx = &members[f];
            let truth = mapped[idx[0]];
            if idx.iter().any(|&i| mapped[i] != truth) {
                return Err(Error::Mapping(format!("file {f} mixes target categories")));
            }
            let decision = match aggregation {
                Aggregation::PerFileMeanProb => {
                    let mut mean = vec![0.0f64; c];
                    for &i in idx {
                        mean.iter_mut().zip(&probs[i]).for_each(|(m, &p)| *m += p as f64);
                    }
                    argmax(&mean)
                }
                _ => {
                    let mut votes = vec![0usize; c];
                    idx.iter().for_each(|&i| votes[predicted[i]] += 1);
                    argmax(&votes)
                }
            };
            confusion.add(truth, decision)?;
        }
        let mut r = compute_metrics(&confusion, source_names)?;
        r.metadata.insert("protocol".into(), json!("cross_domain"));
        r.metadata.insert("level".into(), json!("file"));
        r.metadata.insert("aggregation".into(), serde_json::to_value(aggregation)?);
        Some(r)
    };
    Ok(CrossDomainReport { clip, file })
}

/// Apply a source-domain checkpoint, unchanged, to target-domain clips.
/// `split` restricts the target records; `None` uses all of them.
pub fn eval_crossdomain(
    ckpt: &Checkpoint,
    target: &DatasetManifest,
    mapping: &DomainMapping,
    aggregation: Aggregation,
    split: Option<Split>,
) -> Result<CrossDomainReport> {
    let resolved = mapping.resolve(&target.category_map, &ckpt.category_map)?;
    let records: Vec<ClipRecord> = target
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .cloned()
        .collect();
    let mut mapped = Vec::with_capacity(records.len());
    for r in &records {
        let s = resolved[r.category].ok_or_else(|| {
            Error::Mapping(format!(
                "target category `{}` has no source mapping",
                target.category_map.name(r.category).unwrap_or("?")
            ))
        })?;
        mapped.push(s);
    }
    let preds = predict_records(ckpt, target, &records)?;
    let file_ids: Vec<String> = records.iter().map(|r| r.source_file_id.clone()).collect();
    let probs: Vec<Vec<f32>> = preds.into_iter().map(|p| p.probs).collect();
    let mut report = crossdomain_from_predictions(&file_ids, &mapped, &probs, aggregation, ckpt.category_map.names())?;
    let mapping_json = serde_json::to_value(&mapping.pairs)?;
    report.clip.metadata.insert("mapping".into(), mapping_json.clone());
    if let Some(f) = &mut report.file {
        f.metadata.insert("mapping".into(), mapping_json);
    }
    Ok(report)
}

/// Write one CSV row per clip of `split`: clip id, file id, category name
/// and the pooled embedding. Returns the number of rows.
pub fn export_embeddings(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    split: Split,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let records: Vec<ClipRecord> = manifest.split(split).cloned().collect();
    let preds = predict_records(ckpt, manifest, &records)?;
    let mut w = csv::Writer::from_path(path)?;
    let d = ckpt.config.model_dim;
    let mut header = vec!["clip_id".to_string(), "source_file_id".into(), "category".into()];
    header.extend((0..d).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (r, p) in records.iter().zip(&preds) {
        let mut row = vec![
            r.clip_id(),
            r.source_file_id.clone(),
            manifest.category_map.name(r.category).unwrap_or("?").to_string(),
        ];
        row.extend(p.embedding.iter().map(|v| format!("{v:.8e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}
