//! Experiment configuration file: one JSON document merging model, training,
//! variant and seed settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Variant;
use crate::error::Result;
use crate::explain::DEFAULT_STEPS;
use crate::model::{Architecture, ModelConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Split and oversampling seed; training randomness uses `train.seed`.
    pub seed: u64,
    pub architecture: Architecture,
    pub init_seed: u64,
    pub train: TrainConfig,
    /// Optional JSON rule table replacing the built-in naming rules.
    pub label_rules: Option<PathBuf>,
    pub ig_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::BratsTcga5,
            seed: 0,
            architecture: Architecture::Resnet18,
            init_seed: 0,
            train: TrainConfig::default(),
            label_rules: None,
            ig_steps: DEFAULT_STEPS,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.architecture, self.train.n, self.variant.num_classes(), self.init_seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.variant = Variant::Tcga4;
        cfg.architecture = Architecture::Vgg16;
        cfg.train.n = 7;
        cfg.train.learning_rate = Some(0.005);
        cfg.label_rules = Some("rules.json".into());
        let path = dir.path().join("cfg.json");
        cfg.save(&path).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
        assert_eq!(cfg.model_config().num_classes, 4);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"variant": "TCGA5", "train": {"n": 2}}"#).unwrap();
        assert_eq!(cfg.variant, Variant::Tcga5);
        assert_eq!(cfg.train.n, 2);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.ig_steps, 128);
        assert!(cfg.validate().is_ok());
    }
}
