use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::{build_model, Classifier, ModelConfig};
use crate::error::{Error, Result};
use crate::labels::SequenceType;

const META_KEY: &str = "mriseq";

/// Everything stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// 1-based epoch the weights come from; 0 for an untrained model.
    pub epoch: usize,
    pub val_macro_accuracy: f64,
    pub class_order: Vec<SequenceType>,
    /// Content hash of the manifest the model was trained on.
    pub manifest_hash: Option<String>,
}

/// A trained (or freshly built) classifier with its provenance.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Classifier,
    pub meta: CheckpointMeta,
}

/// Detached copy of every variable, used to keep the best epoch's weights.
#[derive(Debug)]
pub struct WeightSnapshot(BTreeMap<String, Tensor>);

impl Classifier {
    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot(self.vs.variables().into_iter().map(|(k, v)| (k, v.detach().copy())).collect())
    }

    pub fn restore(&mut self, snapshot: &WeightSnapshot) -> Result<()> {
        let vars = self.vs.variables();
        if vars.len() != snapshot.0.len() {
            return Err(Error::InvalidCheckpoint(format!("{} variables, snapshot has {}", vars.len(), snapshot.0.len())));
        }
        tch::no_grad(|| {
            for (name, mut var) in vars {
                let src = snapshot.0.get(&name).ok_or_else(|| Error::InvalidCheckpoint(format!("missing variable {name}")))?;
                if src.size() != var.size() {
                    return Err(Error::InvalidCheckpoint(format!("{name}: shape {:?} vs {:?}", src.size(), var.size())));
                }
                var.copy_(src);
            }
            Ok(())
        })
    }
}

impl Checkpoint {
    pub fn untrained(model: Classifier) -> Self {
        let config = *model.config();
        let meta = CheckpointMeta {
            config,
            epoch: 0,
            val_macro_accuracy: 0.0,
            class_order: config.class_order().to_vec(),
            manifest_hash: None,
        };
        Checkpoint { model, meta }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn num_classes(&self) -> usize {
        self.meta.class_order.len()
    }

    /// Writes a safetensors file: float32 weights plus the JSON meta in the header.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let vars: BTreeMap<String, Tensor> = self.model.var_store().variables().into_iter().collect();
        let mut buffers = Vec::with_capacity(vars.len());
        for (name, t) in &vars {
            let t = t.detach().to_kind(Kind::Float).contiguous();
            let shape: Vec<usize> = t.size().iter().map(|&d| d as usize).collect();
            let mut bytes = vec![0u8; t.numel() * 4];
            t.f_copy_data_u8(&mut bytes, t.numel())?;
            buffers.push((name.clone(), shape, bytes));
        }
        let views = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::InvalidCheckpoint(format!("{e:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&self.meta)?)]);
        safetensors::serialize_to_file(views, &Some(metadata), path.as_ref())
            .map_err(|e| Error::InvalidCheckpoint(format!("{e:?}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let buffer = fs::read(path)?;
        let bad = |e: safetensors::SafeTensorError| Error::InvalidCheckpoint(format!("{}: {e:?}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&buffer).map_err(bad)?;
        let meta_json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::InvalidCheckpoint(format!("{} has no model metadata", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
        if meta.class_order.len() != meta.config.num_classes {
            return Err(Error::InvalidCheckpoint("class_order length differs from num_classes".into()));
        }
        let tensors = SafeTensors::deserialize(&buffer).map_err(bad)?;
        let mut stored = BTreeMap::new();
        for (name, view) in tensors.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::InvalidCheckpoint(format!("{name} is {:?}, expected F32", view.dtype())));
            }
            let shape: Vec<i64> = view.shape().iter().map(|&d| d as i64).collect();
            let t = Tensor::f_from_data_size(view.data(), &shape, Kind::Float)?;
            stored.insert(name, t);
        }
        let mut model = build_model(&meta.config)?;
        model.restore(&WeightSnapshot(stored))?;
        Ok(Checkpoint { model, meta })
    }
}
