use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::augment::{central_subgroups, standardize, SliceStack};
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::labels::SequenceType;
use crate::model::{argmax, tensor_rows, Checkpoint, Classifier};
use crate::store::VolumeStore;
use crate::volume::{load_canonical, CanonicalVolume};
use crate::CANONICAL_SIZE;

use super::metrics::{ConfusionMatrix, Metrics};

const EVAL_BATCH: usize = 32;

/// Whole-volume prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePrediction {
    pub label: SequenceType,
    pub class_index: usize,
    pub probabilities: Vec<f32>,
    pub class_order: Vec<SequenceType>,
}

/// Stacks `B` standardized `n×200×200` stacks into a `B×n×200×200` tensor.
pub fn batch_tensor(stacks: &[SliceStack]) -> Result<Tensor> {
    let n = stacks.first().map(SliceStack::n).ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let mut flat = Vec::with_capacity(stacks.len() * n * CANONICAL_SIZE * CANONICAL_SIZE);
    for s in stacks {
        if s.pixels.dim() != (n, CANONICAL_SIZE, CANONICAL_SIZE) {
            return Err(Error::ShapeMismatch(format!("stack of shape {:?} in an n={n} batch", s.pixels.dim())));
        }
        flat.extend(s.pixels.iter().copied());
    }
    Ok(Tensor::from_slice(&flat).view([stacks.len() as i64, n as i64, CANONICAL_SIZE as i64, CANONICAL_SIZE as i64]))
}

/// Eval-mode softmax for each stack, in batches.
pub fn stack_probabilities(model: &Classifier, stacks: &[SliceStack]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(stacks.len());
    for chunk in stacks.chunks(EVAL_BATCH) {
        let probs = model.probabilities(&batch_tensor(chunk)?)?;
        out.extend(tensor_rows(&probs.to_kind(Kind::Float))?);
    }
    Ok(out)
}

/// Per-volume probabilities: central subgroup(s), standardized, softmax
/// averaged over the two central stacks when `n` is odd.
pub fn volume_probabilities(model: &Classifier, volumes: &[&CanonicalVolume]) -> Result<Vec<Vec<f32>>> {
    let n = model.config().in_channels;
    let mut stacks = Vec::new();
    let mut owners = Vec::new();
    for (i, v) in volumes.iter().enumerate() {
        for s in central_subgroups(v, n)? {
            stacks.push(standardize(&s));
            owners.push(i);
        }
    }
    let k = model.config().num_classes;
    let mut sums = vec![vec![0f64; k]; volumes.len()];
    let mut counts = vec![0usize; volumes.len()];
    for (probs, &i) in stack_probabilities(model, &stacks)?.iter().zip(&owners) {
        for (acc, &p) in sums[i].iter_mut().zip(probs) {
            *acc += p as f64;
        }
        counts[i] += 1;
    }
    Ok(sums.into_iter().zip(counts).map(|(s, c)| s.into_iter().map(|v| (v / c as f64) as f32).collect()).collect())
}

fn to_prediction(checkpoint: &Checkpoint, probabilities: Vec<f32>) -> VolumePrediction {
    let class_index = argmax(&probabilities);
    VolumePrediction {
        label: checkpoint.meta.class_order[class_index],
        class_index,
        probabilities,
        class_order: checkpoint.meta.class_order.clone(),
    }
}

pub fn predict_canonical(checkpoint: &Checkpoint, volume: &CanonicalVolume) -> Result<VolumePrediction> {
    let probs = volume_probabilities(&checkpoint.model, &[volume])?.remove(0);
    Ok(to_prediction(checkpoint, probs))
}

/// Loads, canonicalizes and classifies one volume file or DICOM directory.
pub fn predict_volume(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<VolumePrediction> {
    predict_canonical(checkpoint, &load_canonical(path)?)
}

/// Whole-volume metrics of a model over `(volume, label)` pairs.
pub fn evaluate_volumes(model: &Classifier, items: &[(&CanonicalVolume, SequenceType)]) -> Result<Metrics> {
    let order = model.config().class_order();
    let mut confusion = ConfusionMatrix::new(order);
    let mut loss = 0.0;
    for chunk in items.chunks(EVAL_BATCH) {
        let volumes: Vec<&CanonicalVolume> = chunk.iter().map(|(v, _)| *v).collect();
        for (probs, (_, label)) in volume_probabilities(model, &volumes)?.iter().zip(chunk) {
            let actual = order
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| Error::InvalidManifest(format!("label {label} is outside the model's classes")))?;
            confusion.record(actual, argmax(probs))?;
            loss -= (probs[actual] as f64).max(1e-12).ln();
        }
    }
    let mean = if items.is_empty() { 0.0 } else { loss / items.len() as f64 };
    Ok(Metrics::from_confusion(confusion, mean))
}

/// Evaluates one split of a manifest, one prediction per volume.
pub fn evaluate(checkpoint: &Checkpoint, manifest: &Manifest, split: Split, store: &VolumeStore) -> Result<Metrics> {
    let data_classes = manifest.variant.num_classes();
    if checkpoint.num_classes() != data_classes {
        return Err(Error::ClassCountMismatch { checkpoint: checkpoint.num_classes(), data: data_classes });
    }
    let items = split_items(manifest, split, store)?;
    if items.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    evaluate_volumes(&checkpoint.model, &items)
}

pub(super) fn split_items<'a>(
    manifest: &Manifest,
    split: Split,
    store: &'a VolumeStore,
) -> Result<Vec<(&'a CanonicalVolume, SequenceType)>> {
    manifest
        .in_split(split)
        .filter(|r| !r.is_oversampled_copy)
        .map(|r| Ok((store.get(&r.volume_ref)?, r.label)))
        .collect()
}
