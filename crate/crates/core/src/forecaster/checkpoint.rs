use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Forecaster, ModelConfig};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered `(name, shape, row-major data)` records plus the model
/// configuration and input scaling. Serialized as JSON; identical models give
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: ModelConfig,
    pub scaler: Scaler,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Forecaster, scaler: Scaler) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: model.config().clone(),
            scaler,
            params: model
                .params()
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model and loads the stored parameters into it.
    pub fn to_model(&self) -> Result<Forecaster> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Argument(format!(
                "unsupported checkpoint format {}",
                self.format
            )));
        }
        let mut model = Forecaster::new(self.config.clone())?;
        if model.params().len() != self.params.len() {
            return Err(Error::Argument(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        let ids: Vec<_> = model.params().ids().collect();
        for (id, rec) in ids.into_iter().zip(&self.params) {
            if model.params().name(id) != rec.name {
                return Err(Error::Argument(format!(
                    "checkpoint tensor `{}` where `{}` was expected",
                    rec.name,
                    model.params().name(id)
                )));
            }
            let t = Tensor::new(rec.shape.clone(), rec.data.clone())?;
            t.ensure_shape(model.params().get(id).shape(), &rec.name)?;
            *model.params_mut().get_mut(id) = t;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
