use rayon::prelude::*;

use super::{FeatureSequence, Featurizer, MelConfig};
use crate::error::Result;
use crate::ingest::{ClipLoader, ClipRecord, DatasetManifest};

/// Features for `records`, in the given order. Runs of records from the same
/// source file share one decode; runs are processed in parallel.
pub fn featurize_records(
    manifest: &DatasetManifest,
    records: &[ClipRecord],
    config: &MelConfig,
) -> Result<Vec<FeatureSequence>> {
    let featurizer = Featurizer::new(config, manifest.sample_rate)?;
    let mut runs: Vec<&[ClipRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].source_file_id != records[start].source_file_id {
            if i > start {
                runs.push(&records[start..i]);
            }
            start = i;
        }
    }
    let per_run: Vec<Result<Vec<FeatureSequence>>> = runs
        .par_iter()
        .map(|run| {
            let mut loader = ClipLoader::new(manifest);
            run.iter()
                .map(|r| featurizer.featurize(&loader.clip(r)?))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for run in per_run {
        out.extend(run?);
    }
    Ok(out)
}
