use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use uatr_core::dsp::{featurize_records, write_feature_cache, MelConfig};
use uatr_core::eval::{self, Aggregation, DomainMapping};
use uatr_core::ingest::{build_manifest, discover_sources, CategoryMap, DatasetManifest, Split, SplitRatios};
use uatr_core::nn::{Checkpoint, EncoderConfig};
use uatr_core::optim::{self, TrainConfig, TrainMode};
use uatr_core::synth::{self, Domain, SynthSpec};

use crate::run::{read_json, CliError, CliResult, RunDir};
use crate::{
    EvalArgs, EvalCrossdomainArgs, EvalVarlenArgs, ExportArgs, FeaturizeArgs, PrepareArgs, SynthArgs, TrainArgs,
};

fn existing(path: &Path) -> CliResult<PathBuf> {
    path.canonicalize()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn parse<T: std::str::FromStr<Err = uatr_core::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(CliError::from)
}

fn load_manifest(path: &Path, run: &mut RunDir) -> CliResult<DatasetManifest> {
    let path = existing(path)?;
    run.input(&path)?;
    Ok(DatasetManifest::load(&path)?)
}

fn load_checkpoint(path: &Path, run: &mut RunDir) -> CliResult<Checkpoint> {
    let path = existing(path)?;
    run.input(&path)?;
    Ok(Checkpoint::load(&path)?)
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::config(format!("`{v}` is not a number in `{s}`"))))
        .collect()
}

pub fn prepare(a: &PrepareArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let root = existing(&a.root)?;
    let category_map = match (a.dataset.as_str(), &a.category_map) {
        (_, Some(path)) => {
            let path = existing(path)?;
            run.input(&path)?;
            CategoryMap::load(&path)?
        }
        ("deepship", None) => CategoryMap::deepship(),
        ("shipsear", None) => CategoryMap::shipsear(),
        ("custom", None) => {
            let mut labels: Vec<String> = discover_sources(&root)?.into_iter().map(|s| s.raw_label).collect();
            labels.sort();
            labels.dedup();
            CategoryMap::identity(&labels)?
        }
        (other, None) => {
            return Err(CliError::config(format!("unknown dataset `{other}` (expected deepship, shipsear or custom)")))
        }
    };
    let r = parse_list(&a.ratios)?;
    if r.len() != 3 {
        return Err(CliError::config(format!("--ratios needs three values, got `{}`", a.ratios)));
    }
    let ratios = SplitRatios::new(r[0], r[1], r[2])?;
    let manifest = build_manifest(&root, &category_map, a.clip_seconds, ratios, a.seed)?;
    manifest.save(run.path("manifest.json"))?;
    run.output("manifest.json");
    manifest.write_csv(run.path("manifest.csv"))?;
    run.output("manifest.csv");

    for (i, c) in manifest.counts().iter().enumerate() {
        println!(
            "{:<36} train {:>6}  validation {:>5}  test {:>5}  total {:>6}",
            manifest.category_map.name(i).unwrap_or("?"),
            c[0],
            c[1],
            c[2],
            c.iter().sum::<usize>()
        );
    }
    println!("total clips: {}", manifest.records.len());
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let config = json!({
        "root": root,
        "dataset": a.dataset,
        "category_map": category_map,
        "clip_seconds": a.clip_seconds,
        "ratios": ratios,
        "seed": a.seed,
        "out": a.out,
    });
    run.finish("prepare", config)?;
    Ok(())
}

fn synth_preset(name: &str, seed: u64) -> CliResult<SynthSpec> {
    match name {
        "desk-source" => Ok(SynthSpec::desk_source(seed)),
        "pretrain-source" => Ok(SynthSpec::pretrain_source(seed)),
        "desk-target-train" => Ok(SynthSpec::desk_target_train(seed)),
        "desk-target-test" => Ok(SynthSpec::desk_target_test(seed)),
        other => Err(CliError::config(format!(
            "unknown preset `{other}` (expected desk-source, pretrain-source, desk-target-train or desk-target-test)"
        ))),
    }
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let domain: Option<Domain> = a.domain.as_deref().map(parse).transpose()?;
    let mut spec = match (&a.spec, &a.preset) {
        (Some(_), Some(_)) => return Err(CliError::config("give either --spec or --preset, not both")),
        (Some(path), None) => {
            let path = existing(path)?;
            run.input(&path)?;
            read_json::<SynthSpec>(&path)?
        }
        (None, Some(name)) => synth_preset(name, 0)?,
        (None, None) => match domain {
            Some(Domain::Target) => SynthSpec::desk_target_train(0),
            _ => SynthSpec::desk_source(0),
        },
    };
    if let Some(d) = domain {
        spec.domain = d;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(n) = a.clips_per_category {
        spec.clips_per_category = n;
    }
    spec.validate()?;

    let staged = run.path("");
    let mut manifest = synth::generate(&spec, &staged)?;
    // point the manifest at where the corpus will live after the rename
    manifest.root = run.final_path()?.to_string_lossy().into_owned();
    manifest.save(run.path("manifest.json"))?;
    for name in ["manifest.json", "labels.csv", "synth_spec.json"] {
        run.output(name);
    }
    let mut hasher = Sha256::new();
    for r in &manifest.records {
        if r.clip_index == 0 {
            hasher.update(crate::run::sha256_file(&staged.join(&r.source_file_id))?.as_bytes());
        }
    }
    run.digest("audio/*.wav", hex::encode(hasher.finalize()));
    println!(
        "{} {} files, {} clips",
        spec.domain.as_str(),
        spec.num_categories * spec.files_per_category()?,
        manifest.records.len()
    );
    run.finish("synth", json!({ "spec": spec, "out": a.out }))?;
    Ok(())
}

fn mel_config(path: Option<&Path>, fallback: Option<&MelConfig>, run: &mut RunDir) -> CliResult<MelConfig> {
    match path {
        Some(p) => {
            let p = existing(p)?;
            run.input(&p)?;
            read_json(&p)
        }
        None => Ok(fallback.cloned().unwrap_or_default()),
    }
}

/// File name of a cached clip: the clip id with path separators replaced.
fn cache_name(clip_id: &str) -> String {
    let safe: String = clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.feat")
}

pub fn featurize(a: &FeaturizeArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let mel = mel_config(a.config.as_deref(), None, &mut run)?;
    mel.validate(manifest.sample_rate)?;
    let split: Option<Split> = a.split.as_deref().map(parse).transpose()?;
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .cloned()
        .collect();
    let cache = run.path("cache");
    std::fs::create_dir_all(&cache).map_err(|e| CliError::io(&cache, e))?;
    let hash = mel.hash();
    let mut index = String::from("clip_id,split,category,file,frames\n");
    let mut digest = Sha256::new();
    let mut seen = std::collections::BTreeSet::new();
    for chunk in records.chunks(256) {
        let feats = featurize_records(&manifest, chunk, &mel)?;
        for (r, f) in chunk.iter().zip(&feats) {
            let name = cache_name(&r.clip_id());
            if !seen.insert(name.clone()) {
                return Err(CliError::config(format!("clip ids collide in cache name {name}")));
            }
            let path = cache.join(&name);
            write_feature_cache(&path, f, &hash)?;
            digest.update(crate::run::sha256_file(&path)?.as_bytes());
            index.push_str(&format!(
                "{},{},{},cache/{name},{}\n",
                r.clip_id(),
                r.split.as_str(),
                manifest.category_map.name(r.category).unwrap_or("?"),
                f.len()
            ));
        }
    }
    run.write_json("features.json", &mel)?;
    run.write_text("index.csv", &index)?;
    run.digest("cache/*.feat", hex::encode(digest.finalize()));
    println!("{} clips featurized, {}-dimensional frames", records.len(), mel.output_dim());
    run.finish(
        "featurize",
        json!({ "manifest": a.manifest, "features": mel, "feature_hash": hash, "split": a.split, "out": a.out }),
    )?;
    Ok(())
}

/// Profile, then the config file's keys, then flags.
fn train_config(a: &TrainArgs, run: &mut RunDir) -> CliResult<TrainConfig> {
    let mut merged = serde_json::to_value(TrainConfig::preset(&a.train_profile)?).expect("config serializes");
    if let Some(path) = &a.config {
        let path = existing(path)?;
        run.input(&path)?;
        let overlay: Value = read_json(&path)?;
        let Value::Object(fields) = overlay else {
            return Err(CliError::config(format!("{} is not a JSON object", path.display())));
        };
        for (k, v) in fields {
            merged[k] = v;
        }
    }
    let mut cfg: TrainConfig =
        serde_json::from_value(merged).map_err(|e| CliError::config(format!("training config: {e}")))?;
    if let Some(m) = &a.mode {
        cfg.mode = parse::<TrainMode>(m)?;
    }
    if let Some(p) = &a.init {
        cfg.init_checkpoint = Some(p.clone());
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.warmup_steps {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = (v > 0).then_some(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if cfg.mode == TrainMode::FromScratch {
        cfg.init_checkpoint = None;
    }
    if let Some(p) = &cfg.init_checkpoint {
        cfg.init_checkpoint = Some(existing(p)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let cfg = train_config(a, &mut run)?;
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(load_checkpoint(p, &mut run)?),
        None => None,
    };
    let mel = mel_config(a.features.as_deref(), init.as_ref().and_then(|c| c.features.as_ref()), &mut run)?;
    let categories = manifest.category_map.len();
    let encoder = match (&a.encoder, &init) {
        (Some(p), _) => {
            let p = existing(p)?;
            run.input(&p)?;
            let e: EncoderConfig = read_json(&p)?;
            if e.num_categories != categories {
                return Err(CliError::config(format!(
                    "encoder config has {} categories but the manifest has {categories}",
                    e.num_categories
                )));
            }
            e
        }
        (None, Some(c)) => EncoderConfig { num_categories: categories, ..c.config.clone() },
        (None, None) => EncoderConfig::desk(mel.output_dim(), categories),
    };

    let outcome = optim::train(&manifest, &mel, &encoder, &cfg)?;
    outcome.best.save(run.path("best.ckpt"))?;
    run.output("best.ckpt");
    let last_epoch = outcome.log.epochs().last().map(|e| e.epoch).unwrap_or(0);
    let mut metadata = outcome.best.metadata.clone();
    metadata.insert("epoch".into(), last_epoch.to_string());
    metadata.remove("validation_accuracy");
    let last = Checkpoint {
        params: outcome.last,
        config: encoder.clone(),
        category_map: manifest.category_map.clone(),
        features: Some(mel.clone()),
        metadata,
    };
    last.save(run.path("last.ckpt"))?;
    run.output("last.ckpt");
    outcome.optimizer.save(run.path("optimizer.state"))?;
    run.output("optimizer.state");
    let mut log = outcome.log;
    log.set_best_checkpoint("best.ckpt");
    log.write_jsonl(run.path("train_log.jsonl"))?;
    run.output("train_log.jsonl");

    for e in log.epochs() {
        println!(
            "epoch {:>3}  loss {:.4}  train {:6.2}%  validation {:6.2}%",
            e.epoch, e.train_loss, e.train_accuracy, e.validation_accuracy
        );
    }
    println!(
        "best epoch {} with validation accuracy {:.2}%",
        outcome.best_epoch, outcome.best_validation_accuracy
    );
    run.write_json(
        "summary.json",
        &json!({
            "best_epoch": outcome.best_epoch,
            "best_validation_accuracy": outcome.best_validation_accuracy,
            "epochs_run": log.epochs().count(),
        }),
    )?;
    run.finish(
        "train",
        json!({
            "manifest": a.manifest,
            "features": mel,
            "encoder": encoder,
            "train": cfg,
            "train_profile": a.train_profile,
            "out": a.out,
        }),
    )?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let ckpt = load_checkpoint(&a.checkpoint, &mut run)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let split: Split = parse(&a.split)?;
    let report = eval::eval_split(&ckpt, &manifest, split)?;
    let table = report.to_table();
    print!("{table}");
    run.write_text("report.json", &(report.to_json()? + "\n"))?;
    run.write_text("report.txt", &table)?;
    run.finish(
        "eval",
        json!({ "checkpoint": a.checkpoint, "manifest": a.manifest, "split": split.as_str(), "out": a.out }),
    )?;
    Ok(())
}

pub fn eval_varlen(a: &EvalVarlenArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let ckpt = load_checkpoint(&a.checkpoint, &mut run)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let lengths = parse_list(&a.lengths)?;
    let report = eval::eval_varlen(&ckpt, &manifest, &lengths)?;
    let csv = report.to_csv();
    print!("{csv}");
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    run.write_json("varlen.json", &report)?;
    run.write_text("varlen.csv", &csv)?;
    run.finish(
        "eval-varlen",
        json!({ "checkpoint": a.checkpoint, "manifest": a.manifest, "lengths": lengths, "out": a.out }),
    )?;
    Ok(())
}

pub fn eval_crossdomain(a: &EvalCrossdomainArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let ckpt = load_checkpoint(&a.checkpoint, &mut run)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let mapping = DomainMapping::parse(&a.map)?;
    let aggregation: Aggregation = parse(&a.aggregate)?;
    let split: Option<Split> = a.split.as_deref().map(parse).transpose()?;
    let report = eval::eval_crossdomain(&ckpt, &manifest, &mapping, aggregation, split)?;
    println!("clip-level accuracy: {:.2}% over {} clips", report.clip.accuracy, report.clip.total);
    if let Some(f) = &report.file {
        println!("file-level accuracy: {:.2}% over {} files", f.accuracy, f.total);
    }
    run.write_json("crossdomain.json", &report)?;
    run.finish(
        "eval-crossdomain",
        json!({
            "checkpoint": a.checkpoint,
            "manifest": a.manifest,
            "mapping": mapping,
            "aggregation": aggregation,
            "split": split.map(Split::as_str),
            "out": a.out,
        }),
    )?;
    Ok(())
}

pub fn export_embeddings(a: &ExportArgs) -> CliResult<()> {
    let mut run = RunDir::create(&a.out)?;
    let ckpt = load_checkpoint(&a.checkpoint, &mut run)?;
    let manifest = load_manifest(&a.manifest, &mut run)?;
    let split: Split = parse(&a.split)?;
    let rows = eval::export_embeddings(&ckpt, &manifest, split, run.path("embeddings.csv"))?;
    run.output("embeddings.csv");
    println!("{rows} embeddings of width {}", ckpt.config.model_dim);
    run.finish(
        "export-embeddings",
        json!({ "checkpoint": a.checkpoint, "manifest": a.manifest, "split": split.as_str(), "out": a.out }),
    )?;
    Ok(())
}
