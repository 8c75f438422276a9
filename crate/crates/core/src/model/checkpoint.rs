use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{BeamClassifier, ModelConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "lidarbeam-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model: manifest (format tag, config echo, seed, layer names and
/// shapes) plus the raw 64-bit values. Pruning masks ride along when set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &BeamClassifier) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            seed: model.config.seed,
            config: model.config.clone(),
            params: model
                .params
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    data: p.tensor.data().to_vec(),
                })
                .collect(),
            masks: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    /// Rebuilds the model, checking every tensor against the config's layer
    /// schedule.
    pub fn to_model(&self) -> Result<BeamClassifier> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unsupported checkpoint format `{}`", self.format)));
        }
        let expected = self.config.param_shapes()?;
        if expected.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, config expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        let mut store = ParamStore::new();
        for ((name, shape), arr) in expected.into_iter().zip(&self.params) {
            if arr.name != name || arr.shape != shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                    arr.name, arr.shape
                )));
            }
            store.insert(name, Tensor::new(shape, arr.data.clone())?)?;
        }
        Ok(BeamClassifier { config: self.config.clone(), params: store })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let s = serde_json::to_string(ckpt).map_err(|e| Error::Invalid(e.to_string()))?;
    io::atomic_write(path, s.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    io::read_json(path)
}
