//! Training loop, best-epoch selection, whole-volume evaluation and depth sweeps.

mod inference;
mod metrics;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tch::nn::OptimizerConfig;
use tch::{nn, Kind, Tensor};

use crate::augment::{training_input, AugmentRanges};
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::model::{build_model, Checkpoint, CheckpointMeta, ModelConfig};
use crate::seed::{derive_seed, rng_for, tag};
use crate::store::VolumeStore;
use crate::CANONICAL_DEPTH;

pub use inference::{
    batch_tensor, evaluate, evaluate_volumes, predict_canonical, predict_volume, stack_probabilities, volume_probabilities,
    VolumePrediction,
};
pub use metrics::{read_loss_curve, write_loss_curve, ConfusionMatrix, EpochRecord, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Overrides the architecture's default rate when set.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub momentum: f64,
    /// Input depth; must equal the model's channel count.
    pub n: usize,
    pub seed: u64,
    pub augmentation: AugmentRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: None,
            epochs: 300,
            momentum: 0.9,
            n: 4,
            seed: 0,
            augmentation: AugmentRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=CANONICAL_DEPTH).contains(&self.n) {
            return Err(Error::InvalidDepth(self.n));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if self.learning_rate.is_some_and(|lr| !(lr > 0.0)) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("learning_rate must be positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the first epoch reaching the best validation macro-accuracy.
    pub checkpoint: Checkpoint,
    pub loss_curve: Vec<EpochRecord>,
}

/// Trains without progress callbacks.
pub fn train(manifest: &Manifest, store: &VolumeStore, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(manifest, store, model_config, config, |_| {})
}

/// Trains for `config.epochs` epochs. Every epoch draws a fresh subgroup and
/// augmentation per TRAIN record from `(seed, epoch, record index)`, so the
/// draws do not depend on batch order or worker count.
pub fn train_with_observer(
    manifest: &Manifest,
    store: &VolumeStore,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if model_config.in_channels != config.n {
        return Err(Error::ChannelMismatch { expected: model_config.in_channels, actual: config.n });
    }
    if model_config.num_classes != manifest.variant.num_classes() {
        return Err(Error::ClassCountMismatch { checkpoint: model_config.num_classes, data: manifest.variant.num_classes() });
    }
    let order = model_config.class_order();
    let train_records: Vec<_> = manifest.in_split(Split::Train).collect();
    if train_records.is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let val_items = inference::split_items(manifest, Split::Val, store)?;
    if val_items.is_empty() {
        return Err(Error::EmptySplit(Split::Val.to_string()));
    }
    let train_data = train_records
        .iter()
        .map(|r| {
            let idx = order
                .iter()
                .position(|&c| c == r.label)
                .ok_or_else(|| Error::InvalidManifest(format!("label {} outside the model's classes", r.label)))?;
            Ok((store.get(&r.volume_ref)?, idx as i64))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = build_model(model_config)?;
    let lr = config.learning_rate.unwrap_or_else(|| model_config.architecture.default_learning_rate());
    let mut opt = nn::sgd(config.momentum, 0.0, 0.0, false).build(model.var_store(), lr)?;
    let manifest_hash = manifest.content_hash()?;

    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, crate::model::WeightSnapshot)> = None;
    for epoch in 1..=config.epochs {
        tch::manual_seed(derive_seed(&[config.seed, tag("torch"), epoch as u64]) as i64);
        let mut order_idx: Vec<usize> = (0..train_data.len()).collect();
        rand::seq::SliceRandom::shuffle(order_idx.as_mut_slice(), &mut rng_for(&[config.seed, tag("shuffle"), epoch as u64]));

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order_idx.chunks(config.batch_size).enumerate() {
            let stacks = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = rng_for(&[config.seed, tag("sample"), epoch as u64, i as u64]);
                    training_input(train_data[i].0, config.n, &config.augmentation, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let xs = batch_tensor(&stacks)?;
            let ys = Tensor::from_slice(&batch.iter().map(|&i| train_data[i].1).collect::<Vec<_>>());
            let loss = model.forward_t(&xs, true)?.cross_entropy_for_logits(&ys);
            let value = loss.double_value(&[]);
            if !value.is_finite() {
                return Err(Error::DivergedLoss { epoch, batch: batch_no + 1, loss: value });
            }
            opt.backward_step(&loss);
            loss_sum += value * batch.len() as f64;
        }

        let val = evaluate_volumes(&model, &val_items)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            val_loss: val.mean_loss,
            val_macro_accuracy: val.macro_accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val macro-accuracy {:.4}",
            record.train_loss, record.val_loss, record.val_macro_accuracy
        );
        if best.as_ref().map_or(true, |(_, acc, _)| record.val_macro_accuracy > *acc) {
            best = Some((epoch, record.val_macro_accuracy, model.snapshot()));
        }
        observer(&record);
        curve.push(record);
    }

    let (epoch, val_macro_accuracy, snapshot) = best.expect("at least one epoch");
    model.restore(&snapshot)?;
    let meta = CheckpointMeta {
        config: *model_config,
        epoch,
        val_macro_accuracy,
        class_order: order.to_vec(),
        manifest_hash: Some(manifest_hash),
    };
    Ok(TrainOutcome { checkpoint: Checkpoint { model, meta }, loss_curve: curve })
}

/// One row of the accuracy-vs-depth table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub val_macro_accuracy: f64,
    pub best_epoch: usize,
}

/// Trains one model per depth. All depths are validated before any training.
pub fn sweep_depth(
    manifest: &Manifest,
    store: &VolumeStore,
    model_config: &ModelConfig,
    config: &TrainConfig,
    n_values: &[usize],
    mut on_result: impl FnMut(usize, &TrainOutcome) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if let Some(&bad) = n_values.iter().find(|&&n| !(1..=CANONICAL_DEPTH).contains(&n)) {
        return Err(Error::InvalidDepth(bad));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mc = ModelConfig { in_channels: n, ..*model_config };
        let tc = TrainConfig { n, ..config.clone() };
        let outcome = train(manifest, store, &mc, &tc)?;
        on_result(n, &outcome)?;
        rows.push(SweepRow { n, val_macro_accuracy: outcome.checkpoint.meta.val_macro_accuracy, best_epoch: outcome.checkpoint.meta.epoch });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: impl AsRef<std::path::Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Probability rows of a logits tensor, for callers holding raw logits.
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f32>>> {
    crate::model::tensor_rows(&logits.softmax(-1, Kind::Float))
}
