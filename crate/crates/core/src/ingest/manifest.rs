//! Clip-level dataset manifests with stratified, seeded train/validation/test
//! assignment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::resample::output_len;
use super::{clip_samples, probe_wav};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Name of the optional label index at a dataset root (`path,label` rows).
pub const LABEL_INDEX: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CategoryMapRepr")]
pub struct CategoryMap {
    categories: Vec<String>,
    raw_to_category: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct CategoryMapRepr {
    categories: Vec<String>,
    raw_to_category: BTreeMap<String, usize>,
}

impl TryFrom<CategoryMapRepr> for CategoryMap {
    type Error = Error;

    fn try_from(r: CategoryMapRepr) -> Result<Self> {
        CategoryMap::new(r.categories, r.raw_to_category)
    }
}

impl CategoryMap {
    pub fn new(categories: Vec<String>, raw_to_category: BTreeMap<String, usize>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Mapping("no categories".into()));
        }
        for (i, name) in categories.iter().enumerate() {
            if categories[..i].contains(name) {
                return Err(Error::Mapping(format!("duplicate category `{name}`")));
            }
        }
        if let Some((raw, &idx)) = raw_to_category.iter().find(|(_, &i)| i >= categories.len()) {
            return Err(Error::Mapping(format!(
                "raw label `{raw}` maps to index {idx}, only {} categories",
                categories.len()
            )));
        }
        Ok(Self {
            categories,
            raw_to_category,
        })
    }

    /// Every category is its own (single) raw label.
    pub fn identity<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let categories: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let raw = categories
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self::new(categories, raw)
    }

    pub fn deepship() -> Self {
        Self::identity(&["Cargo", "Passenger", "Tanker", "Tug"]).expect("static map")
    }

    /// Eleven vessel types plus background, consolidated into five classes.
    pub fn shipsear() -> Self {
        let groups: [(&str, &[&str]); 5] = [
            ("Passenger", &["Passenger", "Passengers"]),
            ("OceanLiner_RoRo", &["Ocean liner", "RoRo"]),
            (
                "Fishing_Trawler_Tug_Dredger_Mussel",
                &["Fish boat", "Trawler", "Tugboat", "Dredger", "Mussel boat"],
            ),
            ("Pilot_Sail_Motor", &["Pilot boat", "Sailboat", "Motorboat"]),
            ("Background", &["Background noise", "Natural ambient noise"]),
        ];
        let categories = groups.iter().map(|(c, _)| c.to_string()).collect();
        let raw = groups
            .iter()
            .enumerate()
            .flat_map(|(i, (_, raws))| raws.iter().map(move |r| (r.to_string(), i)))
            .collect();
        Self::new(categories, raw).expect("static map")
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.categories
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.categories.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn raw_labels(&self) -> &BTreeMap<String, usize> {
        &self.raw_to_category
    }

    pub fn resolve_raw(&self, raw: &str) -> Result<usize> {
        self.raw_to_category
            .get(raw)
            .copied()
            .ok_or_else(|| Error::Mapping(format!("unknown raw label `{raw}`")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = Self {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("invalid split ratios {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items; ties go to the earlier
    /// split.
    pub fn apportion(&self, n: usize) -> [usize; 3] {
        let exact = [
            n as f64 * self.train,
            n as f64 * self.validation,
            n as f64 * self.test,
        ];
        let mut counts = exact.map(|x| x.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub source_file_id: String,
    pub clip_index: usize,
    pub sample_offset: usize,
    pub clip_samples: usize,
    pub category: usize,
    pub split: Split,
}

impl ClipRecord {
    pub fn clip_id(&self) -> String {
        format!("{}#{}", self.source_file_id, self.clip_index)
    }
}

/// A source recording found under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    /// Path relative to the root, `/`-separated.
    pub id: String,
    pub raw_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub root: String,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub category_map: CategoryMap,
    pub records: Vec<ClipRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// `counts[category][split]`.
    pub fn counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0usize; 3]; self.category_map.len()];
        for r in &self.records {
            let s = Split::ALL.iter().position(|&s| s == r.split).unwrap();
            counts[r.category][s] += 1;
        }
        counts
    }

    pub fn source_path(&self, file_id: &str) -> PathBuf {
        Path::new(&self.root).join(file_id)
    }

    /// Keep only records whose category is listed.
    pub fn restrict_to(&self, categories: &[usize]) -> DatasetManifest {
        let mut m = self.clone();
        m.records.retain(|r| categories.contains(&r.category));
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        if let Some(r) = m.records.iter().find(|r| r.category >= m.category_map.len()) {
            return Err(Error::Manifest(format!(
                "record {} has category {} outside the category map",
                r.clip_id(),
                r.category
            )));
        }
        Ok(m)
    }

    /// CSV mirror, one row per clip record.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "source_file_id",
            "clip_index",
            "sample_offset",
            "clip_samples",
            "category",
            "category_name",
            "split",
        ])?;
        for r in &self.records {
            w.write_record([
                r.source_file_id.clone(),
                r.clip_index.to_string(),
                r.sample_offset.to_string(),
                r.clip_samples.to_string(),
                r.category.to_string(),
                self.category_map.name(r.category).unwrap_or("").to_string(),
                r.split.as_str().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if is_wav(&path) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Find labelled source recordings: either rows of `labels.csv`
/// (`path,label`, paths relative to the root) or WAV files under one
/// subdirectory per raw label. Sorted by file id.
pub fn discover_sources(root: impl AsRef<Path>) -> Result<Vec<SourceFile>> {
    let root = root.as_ref();
    let index = root.join(LABEL_INDEX);
    let mut sources = Vec::new();
    if index.is_file() {
        let mut rdr = csv::Reader::from_path(&index)?;
        for row in rdr.records() {
            let row = row?;
            let (Some(path), Some(label)) = (row.get(0), row.get(1)) else {
                return Err(Error::Manifest(format!("malformed row in {}", index.display())));
            };
            sources.push(SourceFile {
                id: path.trim().to_string(),
                raw_label: label.trim().to_string(),
            });
        }
    } else {
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        for entry in entries {
            let dir = entry.map_err(|e| Error::io(root, e))?.path();
            if !dir.is_dir() {
                continue;
            }
            let raw_label = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut files = Vec::new();
            collect_wavs(&dir, &mut files)?;
            sources.extend(files.into_iter().map(|f| SourceFile {
                id: relative_id(root, &f),
                raw_label: raw_label.clone(),
            }));
        }
    }
    sources.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sources.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Manifest(format!("file `{}` listed twice", w[0].id)));
    }
    Ok(sources)
}

/// Default target rate of the front end.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Enumerate clips of every source file (at 16 kHz) and assign splits.
pub fn build_manifest(
    root: impl AsRef<Path>,
    category_map: &CategoryMap,
    clip_seconds: f64,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetManifest> {
    build_manifest_at_rate(root, category_map, clip_seconds, ratios, seed, TARGET_SAMPLE_RATE)
}

pub fn build_manifest_at_rate(
    root: impl AsRef<Path>,
    category_map: &CategoryMap,
    clip_seconds: f64,
    ratios: SplitRatios,
    seed: u64,
    sample_rate: u32,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    ratios.validate()?;
    let clip_len = clip_samples(sample_rate, clip_seconds)?;
    let sources = discover_sources(root)?;

    let unknown: Vec<&str> = sources
        .iter()
        .filter(|s| category_map.resolve_raw(&s.raw_label).is_err())
        .map(|s| s.raw_label.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Mapping(format!(
            "unknown raw label(s): {}",
            unknown.join(", ")
        )));
    }

    let lengths: Vec<usize> = sources
        .par_iter()
        .map(|s| {
            let info = probe_wav(root.join(&s.id))?;
            Ok(output_len(info.frames, info.sample_rate, sample_rate))
        })
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut records = Vec::new();
    let mut too_short = 0usize;
    for (src, &len) in sources.iter().zip(&lengths) {
        let category = category_map.resolve_raw(&src.raw_label)?;
        let n = len / clip_len;
        if n == 0 {
            too_short += 1;
        }
        records.extend((0..n).map(|i| ClipRecord {
            source_file_id: src.id.clone(),
            clip_index: i,
            sample_offset: i * clip_len,
            clip_samples: clip_len,
            category,
            split: Split::Train,
        }));
    }
    if too_short > 0 {
        warnings.push(format!("{too_short} file(s) shorter than one clip were skipped"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, name) in category_map.names().iter().enumerate() {
        let mut members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].category == c)
            .collect();
        if members.is_empty() {
            warnings.push(format!("category `{name}` has no clips"));
            continue;
        }
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = ratios.apportion(members.len());
        for (rank, &i) in members.iter().enumerate() {
            records[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }

    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        root: root.to_string_lossy().into_owned(),
        sample_rate,
        clip_seconds,
        seed,
        ratios,
        category_map: category_map.clone(),
        records,
        warnings,
    })
}
