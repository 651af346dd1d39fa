use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mriseq::config::ExperimentConfig;
use serde::Serialize;

/// Self-contained record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub manifest_hash: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub metrics: Option<serde_json::Value>,
}

impl RunRecord {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        RunRecord {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: config.clone(),
            seed: config.seed,
            manifest_hash: None,
            outputs: Vec::new(),
            metrics: None,
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `run.json` and `config.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let run = dir.join("run.json");
        fs::write(&run, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", run.display()))?;
        self.config.save(dir.join("config.json"))?;
        Ok(())
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
