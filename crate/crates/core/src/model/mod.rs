//! n-channel 2D classifiers and their checkpoint files.

mod arch;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tch::{nn, nn::ModuleT, Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::labels::SequenceType;
use crate::{CANONICAL_DEPTH, CANONICAL_SIZE};

pub use checkpoint::{Checkpoint, CheckpointMeta, WeightSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Architecture {
    Resnet18,
    Alexnet,
    Squeezenet11,
    Mobilenetv2,
    Vgg16,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Architecture::Resnet18, Architecture::Alexnet, Architecture::Squeezenet11, Architecture::Mobilenetv2, Architecture::Vgg16];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Resnet18 => "RESNET18",
            Architecture::Alexnet => "ALEXNET",
            Architecture::Squeezenet11 => "SQUEEZENET11",
            Architecture::Mobilenetv2 => "MOBILENETV2",
            Architecture::Vgg16 => "VGG16",
        }
    }

    /// Base SGD learning rate. The large plain-convolution backbones get a tenth
    /// of the default rate; the others diverge less readily.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Architecture::Alexnet | Architecture::Vgg16 => 0.001,
            _ => 0.01,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        match key.as_str() {
            "RESNET18" => Ok(Architecture::Resnet18),
            "ALEXNET" => Ok(Architecture::Alexnet),
            "SQUEEZENET11" => Ok(Architecture::Squeezenet11),
            "MOBILENETV2" => Ok(Architecture::Mobilenetv2),
            "VGG16" => Ok(Architecture::Vgg16),
            _ => Err(Error::UnsupportedArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub in_channels: usize,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, in_channels: usize, num_classes: usize, init_seed: u64) -> Self {
        ModelConfig { architecture, in_channels, num_classes, init_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=CANONICAL_DEPTH).contains(&self.in_channels) {
            return Err(Error::InvalidDepth(self.in_channels));
        }
        if !matches!(self.num_classes, 4 | 5) {
            return Err(Error::InvalidConfig(format!("num_classes must be 4 or 5, got {}", self.num_classes)));
        }
        Ok(())
    }

    pub fn class_order(&self) -> &'static [SequenceType] {
        SequenceType::class_order(self.num_classes)
    }
}

/// Anything that maps a `B×n×H×W` float batch to `B×K` logits differentiably.
pub trait LogitModel {
    fn in_channels(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Logits in inference mode.
    fn logits(&self, xs: &Tensor) -> Tensor;
}

/// A built network together with the variable store that owns its weights.
pub struct Classifier {
    config: ModelConfig,
    vs: nn::VarStore,
    net: Box<dyn ModuleT>,
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Builds a randomly initialized classifier. Initialization is seeded from
/// `config.init_seed` and touches libtorch's global generator.
pub fn build_model(config: &ModelConfig) -> Result<Classifier> {
    config.validate()?;
    tch::manual_seed(config.init_seed as i64);
    let vs = nn::VarStore::new(Device::Cpu);
    let net = arch::build(&vs.root(), config.architecture, config.in_channels as i64, config.num_classes as i64);
    Ok(Classifier { config: *config, vs, net })
}

impl Classifier {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    fn check_input(&self, xs: &Tensor) -> Result<()> {
        let size = xs.size();
        if size.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected B×n×H×W input, got {size:?}")));
        }
        if size[1] as usize != self.config.in_channels {
            return Err(Error::ChannelMismatch { expected: self.config.in_channels, actual: size[1] as usize });
        }
        Ok(())
    }

    /// Logits for a `B×n×H×W` batch; `train` selects batch-statistics and dropout.
    pub fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(xs)?;
        Ok(self.net.forward_t(&xs.to_kind(Kind::Float), train))
    }

    /// Eval-mode logits.
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| self.forward_t(xs, false))
    }

    /// Eval-mode softmax rows.
    pub fn probabilities(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(self.forward(xs)?.softmax(-1, Kind::Float))
    }

    pub fn parameter_count(&self) -> usize {
        self.vs.trainable_variables().iter().map(|t| t.numel()).sum()
    }

    /// Name of the first convolution's weight in the variable store.
    pub fn first_layer_name(&self) -> &'static str {
        arch::first_layer_name(self.config.architecture)
    }
}

impl LogitModel for Classifier {
    fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, xs: &Tensor) -> Tensor {
        self.net.forward_t(xs, false)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Copies a `B×C` float tensor into rows.
pub fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    let size = t.size();
    if size.len() != 2 {
        return Err(Error::ShapeMismatch(format!("expected a 2-D tensor, got {size:?}")));
    }
    let flat: Vec<f32> = Vec::<f32>::try_from(t.to_kind(Kind::Float).contiguous().view([-1]))?;
    Ok(flat.chunks(size[1] as usize).map(<[f32]>::to_vec).collect())
}

/// Dummy canonical-size input shape for a config.
pub fn input_shape(batch: usize, config: &ModelConfig) -> [i64; 4] {
    [batch as i64, config.in_channels as i64, CANONICAL_SIZE as i64, CANONICAL_SIZE as i64]
}
