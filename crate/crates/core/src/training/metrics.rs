use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::SequenceType;

/// Rows are actual classes, columns predicted, both in `class_order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_order: Vec<SequenceType>,
}

impl ConfusionMatrix {
    pub fn new(class_order: &[SequenceType]) -> Self {
        let k = class_order.len();
        ConfusionMatrix { counts: vec![vec![0; k]; k], class_order: class_order.to_vec() }
    }

    /// Tallies `(actual, predicted)` class-index pairs.
    pub fn from_pairs(class_order: &[SequenceType], pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = ConfusionMatrix::new(class_order);
        for (actual, predicted) in pairs {
            m.record(actual, predicted)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let k = self.class_order.len();
        if actual >= k || predicted >= k {
            return Err(Error::ShapeMismatch(format!("class index ({actual}, {predicted}) outside 0..{k}")));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    pub fn row_total(&self, actual: usize) -> u64 {
        self.counts[actual].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Recall of each class that occurs in the ground truth.
    pub fn per_class_recall(&self) -> BTreeMap<SequenceType, f64> {
        self.class_order
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.row_total(i) > 0)
            .map(|(i, &c)| (c, self.counts[i][i] as f64 / self.row_total(i) as f64))
            .collect()
    }

    /// Unweighted mean of [`per_class_recall`](Self::per_class_recall); 0 for an empty matrix.
    pub fn macro_accuracy(&self) -> f64 {
        let recalls = self.per_class_recall();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.values().sum::<f64>() / recalls.len() as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            (0..self.class_order.len()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64
        }
    }

    /// CSV with an `actual` column followed by one column per predicted class.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["actual".to_string()];
        header.extend(self.class_order.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (i, c) in self.class_order.iter().enumerate() {
            let mut row = vec![c.to_string()];
            row.extend(self.counts[i].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_accuracy: f64,
    pub per_class_recall: BTreeMap<SequenceType, f64>,
    pub confusion: ConfusionMatrix,
    /// Mean cross-entropy of the per-volume probabilities.
    pub mean_loss: f64,
    pub loss_curve: Vec<EpochRecord>,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix, mean_loss: f64) -> Self {
        Metrics {
            macro_accuracy: confusion.macro_accuracy(),
            per_class_recall: confusion.per_class_recall(),
            confusion,
            mean_loss,
            loss_curve: Vec::new(),
        }
    }
}

pub fn write_loss_curve(curve: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for record in curve {
        w.serialize(record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_curve(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
