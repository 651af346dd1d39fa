//! `mriseq` command-line driver.

mod commands;
mod run;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mriseq", version, about = "MRI sequence type classification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset variant, e.g. BRATS_TCGA5 or TCGA4.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Input depth (slices per stack).
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Backbone: RESNET18, ALEXNET, SQUEEZENET11, MOBILENETV2 or VGG16.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// Sets the split, initialization and training seeds at once.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk dataset trees and write a labeled listing plus a discard report.
    Scan {
        /// `BASE_DATASET=DIR`, e.g. `TCGA_GBM=/data/tcga`. Repeatable.
        #[arg(long = "root", required = true, value_name = "BASE=DIR")]
        roots: Vec<String>,
        /// JSON rule table replacing the built-in naming rules.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Split a listing and build one variant's manifest.
    Assemble {
        #[arg(long)]
        listing: PathBuf,
    },
    /// Train on a manifest and keep the best validation epoch.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "TEST")]
        split: String,
    },
    /// Train one model per input depth and write the accuracy-vs-depth table.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16")]
        depths: Vec<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify volume files or DICOM series directories.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Integrated Gradients overlays for one volume.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Class to attribute; defaults to the predicted class.
        #[arg(long)]
        target: Option<String>,
    },
    /// Regenerate figures from sweep or loss-curve CSVs.
    Plot {
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        losses: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    commands::run(cli)
}
