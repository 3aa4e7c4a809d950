//! Single-file checkpoints: named parameter arrays plus a metadata record.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::model::{Arch, CalibratableModel, ModelMeta};

const FORMAT: &str = "macc-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredArray {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    pub metadata: ModelMeta,
    params: BTreeMap<String, StoredArray>,
    /// Free-form record of the run that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &CalibratableModel, run: Option<serde_json::Value>) -> Result<Self> {
        if model.meta().arch == Arch::Custom {
            return Err(Error::config("hand-assembled models cannot be checkpointed"));
        }
        let params = model
            .params()
            .into_iter()
            .map(|(name, a)| {
                let stored = StoredArray {
                    shape: [a.nrows(), a.ncols()],
                    data: a.iter().copied().collect(),
                };
                (name, stored)
            })
            .collect();
        Ok(Self {
            format: FORMAT.to_string(),
            metadata: model.meta().clone(),
            params,
            run,
        })
    }

    /// Rebuilds the architecture from metadata and loads every named array into it.
    pub fn to_model(&self) -> Result<CalibratableModel> {
        let m = &self.metadata;
        let mut model = CalibratableModel::build(m.arch, m.input, m.n_classes, m.dropout_rate, m.seed)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::domain(format!(
                "checkpoint holds {} arrays, {} expects {}",
                self.params.len(),
                m.arch,
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| Error::domain(format!("checkpoint is missing array {name}")))?;
            if stored.shape != [slot.nrows(), slot.ncols()] {
                return Err(Error::domain(format!(
                    "array {name} has shape {:?}, architecture expects [{}, {}]",
                    stored.shape,
                    slot.nrows(),
                    slot.ncols()
                )));
            }
            *slot = Array2::from_shape_vec((stored.shape[0], stored.shape[1]), stored.data.clone())
                .map_err(|e| Error::domain(format!("array {name}: {e}")))?;
        }
        model.set_training_step(m.training_step);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ckpt.format != FORMAT {
            return Err(Error::format(path, format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }
}

/// 64-bit fingerprint of a model's parameter names and values.
pub fn model_checksum(model: &CalibratableModel) -> u64 {
    let mut hasher = Sha256::new();
    for (name, a) in model.params() {
        hasher.update(name.as_bytes());
        for v in a.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}
