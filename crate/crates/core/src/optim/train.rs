use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, warmup_lr, OptimizerState, TrainConfig, TrainMode};
use crate::dsp::{featurize_records, FeatureSequence, MelConfig};
use crate::error::{Error, Result};
use crate::ingest::{CategoryMap, DatasetManifest, Split};
use crate::nn::{
    backward, batch_loss, forward, init_head, init_params, is_head_param, predict_batch,
    stack_batch, Checkpoint, EncoderConfig, Mode, ParamStore,
};

/// Featurized clips with their category indices.
#[derive(Debug, Clone, Default)]
pub struct LabeledFeatures {
    pub feats: Vec<FeatureSequence>,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn from_split(manifest: &DatasetManifest, split: Split, mel: &MelConfig) -> Result<Self> {
        let records: Vec<_> = manifest.split(split).cloned().collect();
        Ok(Self {
            feats: featurize_records(manifest, &records, mel)?,
            labels: records.iter().map(|r| r.category).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent, measured on the training batches as they were seen.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
    Best {
        epoch: usize,
        validation_accuracy: f64,
        checkpoint: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    /// Record the file the best checkpoint was written to.
    pub fn set_best_checkpoint(&mut self, path: &str) {
        for r in &mut self.records {
            if let LogRecord::Best { checkpoint, .. } = r {
                *checkpoint = Some(path.to_string());
            }
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    /// Parameters and optimizer state after the last epoch run.
    pub last: ParamStore,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
}

/// Featurize the manifest's train and validation splits, then train.
pub fn train(
    manifest: &DatasetManifest,
    mel: &MelConfig,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let init = match &config.init_checkpoint {
        Some(path) if config.mode != TrainMode::FromScratch => Some(Checkpoint::load(path)?),
        _ => None,
    };
    let train_set = LabeledFeatures::from_split(manifest, Split::Train, mel)?;
    let val_set = LabeledFeatures::from_split(manifest, Split::Validation, mel)?;
    train_on_features(&train_set, &val_set, &manifest.category_map, mel, encoder, config, init.as_ref())
}

fn accuracy(params: &ParamStore, encoder: &EncoderConfig, set: &LabeledFeatures) -> Result<f64> {
    let refs: Vec<&FeatureSequence> = set.feats.iter().collect();
    let preds = predict_batch(params, encoder, &refs)?;
    let correct = preds
        .iter()
        .zip(&set.labels)
        .filter(|(p, &y)| p.category() == y)
        .count();
    Ok(100.0 * correct as f64 / set.len() as f64)
}

fn initial_params(
    categories: &CategoryMap,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    init: Option<&Checkpoint>,
) -> Result<ParamStore> {
    if config.mode == TrainMode::FromScratch {
        return init_params(encoder, config.seed);
    }
    let init = init.ok_or_else(|| {
        Error::Config(format!("{:?} training needs an init checkpoint", config.mode))
    })?;
    if !init.config.encoder_compatible(encoder) {
        return Err(Error::Config(format!(
            "init checkpoint encoder {:?} is incompatible with {:?}",
            init.config, encoder
        )));
    }
    let mut params = init.params.clone();
    if init.category_map.names() != categories.names() {
        let (w, b) = init_head(encoder);
        params.head_weight = w;
        params.head_bias = b;
    }
    Ok(params)
}

/// Train on pre-extracted features. `init` supplies the encoder for
/// `full_finetune` and `head_only`; its head is kept only when its category
/// names equal `categories`.
pub fn train_on_features(
    train_set: &LabeledFeatures,
    val_set: &LabeledFeatures,
    categories: &CategoryMap,
    mel: &MelConfig,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate_without_path()?;
    encoder.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }
    if encoder.num_categories != categories.len() {
        return Err(Error::Config(format!(
            "encoder head has {} outputs but the dataset has {} categories",
            encoder.num_categories,
            categories.len()
        )));
    }
    if mel.output_dim() != encoder.input_dim {
        return Err(Error::Shape(format!(
            "features have dimension {} but the encoder expects {}",
            mel.output_dim(),
            encoder.input_dim
        )));
    }
    for set in [train_set, val_set] {
        if let Some(f) = set.feats.iter().find(|f| f.dim() != encoder.input_dim) {
            return Err(Error::Shape(format!(
                "feature dimension {} but the encoder expects {}",
                f.dim(),
                encoder.input_dim
            )));
        }
        if let Some(&y) = set.labels.iter().find(|&&y| y >= encoder.num_categories) {
            return Err(Error::Index { index: y, len: encoder.num_categories });
        }
    }

    let mut params = initial_params(categories, encoder, config, init)?;
    let trainable = |name: &str| config.mode != TrainMode::HeadOnly || is_head_param(name);
    let mut state = OptimizerState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut log = TrainLog::default();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            // equal-length groups, in order of first appearance
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut first_seen: Vec<usize> = Vec::new();
            for &i in batch {
                let len = train_set.feats[i].len();
                if !groups.contains_key(&len) {
                    first_seen.push(len);
                }
                groups.entry(len).or_default().push(i);
            }
            let mut grads = params.zeros_like();
            let mut batch_loss_sum = 0.0;
            for len in first_seen {
                let idx = &groups[&len];
                let feats: Vec<&FeatureSequence> = idx.iter().map(|&i| &train_set.feats[i]).collect();
                let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
                let (x, seq) = stack_batch::<f32>(&feats, encoder)?;
                let mut out = forward(&params, encoder, x, idx.len(), seq, Mode::Train, dropout_rng.random())?;
                batch_loss_sum += batch_loss(&out.tape, &labels) * idx.len() as f64;
                correct += out
                    .probs
                    .iter()
                    .zip(&labels)
                    .filter(|(p, &y)| crate::nn::argmax(p) == y)
                    .count();
                let mut g = backward(&params, encoder, &mut out.tape, &labels)?;
                g.scale(idx.len() as f32 / batch.len() as f32);
                grads.accumulate(&g);
            }
            let loss = batch_loss_sum / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite { name: format!("loss at step {}", state.t + 1) });
            }
            loss_sum += batch_loss_sum;

            let grad_norm = grads
                .named()
                .iter()
                .filter(|(n, _)| trainable(n))
                .map(|(_, t)| t.sum_squares())
                .sum::<f64>()
                .sqrt();
            if let Some(clip) = config.grad_clip_norm {
                if grad_norm > clip {
                    grads.scale((clip / grad_norm) as f32);
                }
            }
            let step = state.t + 1;
            let lr = warmup_lr(step, config.base_lr, config.warmup_steps)?;
            adamw_step(&mut params, &grads, &mut state, lr, config, trainable)?;
            log.records.push(LogRecord::Step(StepRecord { step, epoch, lr, loss, grad_norm }));
        }

        let validation_accuracy = accuracy(&params, encoder, val_set)?;
        log.records.push(LogRecord::Epoch(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: 100.0 * correct as f64 / train_set.len() as f64,
            validation_accuracy,
        }));
        log::info!("epoch {epoch}: validation accuracy {validation_accuracy:.2}%");
        if validation_accuracy > best.2 {
            best = (params.clone(), epoch, validation_accuracy);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (best_params, best_epoch, best_acc) = best;
    log.records.push(LogRecord::Best {
        epoch: best_epoch,
        validation_accuracy: best_acc,
        checkpoint: None,
    });
    let mut metadata = BTreeMap::new();
    metadata.insert("epoch".to_string(), best_epoch.to_string());
    metadata.insert("validation_accuracy".to_string(), format!("{best_acc}"));
    metadata.insert("seed".to_string(), config.seed.to_string());
    metadata.insert(
        "mode".to_string(),
        serde_json::to_value(config.mode)?.as_str().unwrap_or_default().to_string(),
    );
    Ok(TrainOutcome {
        best: Checkpoint {
            params: best_params,
            config: encoder.clone(),
            category_map: categories.clone(),
            features: Some(mel.clone()),
            metadata,
        },
        best_epoch,
        best_validation_accuracy: best_acc,
        last: params,
        optimizer: state,
        log,
    })
}


#[cfg(test)]
mod tests {
    use super::tests_support::*;
    use super::*;

    fn small(dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim: dim,
            model_dim: 16,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            dropout_rate: 0.1,
            max_positions: 64,
            num_categories: 4,
        }
    }

    fn mel_for(dim: usize) -> MelConfig {
        MelConfig { n_mels: dim, lfr_m: 1, lfr_n: 1, ..MelConfig::default() }
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 3, warmup_steps: 5, base_lr: 1e-3, batch_size: 4, ..TrainConfig::desk() }
    }

    #[test]
    fn same_seed_same_run() {
        let train = toy_set(4, 4, 5, 8, 1);
        let val = toy_set(1, 4, 5, 8, 2);
        let run = || train_on_features(&train, &val, &cats(4), &mel_for(8), &small(8), &quick(), None).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
        let steps: Vec<u64> = a.log.steps().map(|s| s.step).collect();
        assert!(steps.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(steps.len(), 3 * 4);
        let lines = a.log.to_jsonl().unwrap();
        assert_eq!(lines.lines().count(), a.log.records.len());
        assert!(lines.lines().next().unwrap().contains("\"kind\":\"step\""));
    }

    #[test]
    fn head_only_leaves_encoder_bytes_alone() {
        let train = toy_set(3, 4, 4, 8, 3);
        let val = toy_set(1, 4, 4, 8, 4);
        let enc = small(8);
        let init = Checkpoint {
            params: init_params(&EncoderConfig { num_categories: 3, ..enc.clone() }, 9).unwrap(),
            config: EncoderConfig { num_categories: 3, ..enc.clone() },
            category_map: cats(3),
            features: None,
            metadata: BTreeMap::new(),
        };
        let cfg = TrainConfig { mode: TrainMode::HeadOnly, ..quick() };
        let out = train_on_features(&train, &val, &cats(4), &mel_for(8), &enc, &cfg, Some(&init)).unwrap();
        for ((name, a), (_, b)) in out.last.named().iter().zip(init.params.named()) {
            if !is_head_param(name) {
                assert_eq!(*a, b, "{name} changed");
            }
        }
        assert_eq!(out.last.head_weight.shape(), &[4, 16]);
        // full fine-tuning moves the encoder
        let cfg = TrainConfig { mode: TrainMode::FullFinetune, ..quick() };
        let out = train_on_features(&train, &val, &cats(4), &mel_for(8), &enc, &cfg, Some(&init)).unwrap();
        assert_ne!(out.last.layers[0].w1, init.params.layers[0].w1);
    }

    #[test]
    fn configuration_errors() {
        let train = toy_set(2, 4, 4, 8, 5);
        let val = toy_set(1, 4, 4, 8, 6);
        let enc = small(8);
        let other = EncoderConfig { model_dim: 8, ..enc.clone() };
        let init = Checkpoint {
            params: init_params(&other, 0).unwrap(),
            config: other,
            category_map: cats(4),
            features: None,
            metadata: BTreeMap::new(),
        };
        let cfg = TrainConfig { mode: TrainMode::FullFinetune, ..quick() };
        let err = train_on_features(&train, &val, &cats(4), &mel_for(8), &enc, &cfg, Some(&init)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = train_on_features(&train, &val, &cats(4), &mel_for(8), &enc, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = train_on_features(&train, &val, &cats(4), &mel_for(9), &small(9), &quick(), None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        let empty = LabeledFeatures::default();
        assert!(train_on_features(&train, &empty, &cats(4), &mel_for(8), &enc, &quick(), None).is_err());
    }

    #[test]
    fn best_epoch_ties_go_to_the_earlier_epoch() {
        let train = toy_set(2, 4, 4, 8, 7);
        let val = toy_set(1, 4, 4, 8, 8);
        // with a vanishing learning rate validation accuracy never changes
        let cfg = TrainConfig { base_lr: 1e-30, epochs: 4, patience: None, ..quick() };
        let out = train_on_features(&train, &val, &cats(4), &mel_for(8), &small(8), &cfg, None).unwrap();
        assert_eq!(out.best_epoch, 1);
        let cfg = TrainConfig { patience: Some(2), ..cfg };
        let out = train_on_features(&train, &val, &cats(4), &mel_for(8), &small(8), &cfg, None).unwrap();
        assert_eq!(out.log.epochs().count(), 3);
    }
}
