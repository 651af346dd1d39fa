use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable volume {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("series {path} mixes slice dimensions {dims:?}")]
    MixedSliceDimensions { path: PathBuf, dims: Vec<(usize, usize)> },

    #[error("{name} is not a sequence volume")]
    NotASequenceFile { name: String },

    #[error("unknown dataset variant {0:?}")]
    UnknownVariant(String),

    #[error("unknown base dataset {0:?}")]
    UnknownBaseDataset(String),

    #[error("unknown sequence type {0:?}")]
    UnknownSequenceType(String),

    #[error("input depth n={0} is outside 1..=16")]
    InvalidDepth(usize),

    #[error("unsupported architecture {0:?}")]
    UnsupportedArchitecture(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("model expects {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("checkpoint has {checkpoint} classes but the evaluated data uses {data}")]
    ClassCountMismatch { checkpoint: usize, data: usize },

    #[error("split {0} is empty")]
    EmptySplit(String),

    #[error("training loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("integrated gradients needs at least 2 steps, got {0}")]
    InvalidSteps(usize),

    #[error("volume {0:?} is missing from the in-memory store")]
    MissingVolume(String),

    #[error("no readable volumes under {0}")]
    NoReadableVolumes(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Torch(#[from] tch::TchError),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn unreadable(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::UnreadableFile { path: path.into(), reason: reason.to_string() }
    }
}
