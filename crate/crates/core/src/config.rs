//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! epochs = 40
//! batch_size = 64
//! n_passes = 10
//! output_dir = "runs"
//!
//! [dataset]
//! id = "blobs-synthetic"
//! n_classes = 3
//! n = 3000
//!
//! [model]
//! arch = "mlp-small"
//! dropout = [0.2, 0.3, 0.5]
//!
//! [task]
//! kind = "fl"
//! gamma = 3
//!
//! [auxiliary]
//! kind = "macc"
//! beta = [1, 5, 10]
//!
//! [optimizer]
//! lr = 0.05
//! milestones = [20, 30]
//! factors = [0.1, 0.1]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{AuxLossSpec, TaskLossSpec};
use crate::metrics::DEFAULT_BINS;
use crate::nn::Arch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Dropout-rate grid searched on the validation set.
    #[serde(default = "default_dropout_grid")]
    pub dropout: Vec<f64>,
}

pub fn default_dropout_grid() -> Vec<f64> {
    vec![0.2, 0.3, 0.5]
}

/// Momentum SGD with step decay: the rate is multiplied by `factors[i]`
/// from epoch `milestones[i]` onward (epochs count from 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub factors: Vec<f64>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: Vec::new(),
            factors: Vec::new(),
        }
    }
}

impl OptimizerSpec {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .zip(&self.factors)
            .filter(|(&m, _)| epoch >= m)
            .fold(self.lr, |lr, (_, f)| lr * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    pub model: ModelSpec,
    pub task: TaskLossSpec,
    /// Absent means plain task-loss training.
    #[serde(default)]
    pub auxiliary: Option<AuxLossSpec>,
    #[serde(default = "default_passes")]
    pub n_passes: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_passes() -> usize {
    10
}
fn default_batch() -> usize {
    64
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// A small blobs run; handy for tests and examples.
    pub fn blobs_default(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetSpec::blobs(3, 3000, seed),
            split: SplitSpec {
                seed,
                ..SplitSpec::default()
            },
            model: ModelSpec {
                arch: Arch::MlpSmall,
                dropout: vec![0.3],
            },
            task: TaskLossSpec::Ce,
            auxiliary: None,
            n_passes: default_passes(),
            epochs: 20,
            batch_size: default_batch(),
            optimizer: OptimizerSpec::default(),
            bins: DEFAULT_BINS,
            output_dir: default_output(),
        }
    }

    /// The desk-scale comparison setting: 128-feature blobs with enough class
    /// overlap that an NLL-trained `mlp-small` ends up overconfident, one
    /// dropout rate (0.5) and a step-decayed learning rate.
    pub fn desk_blobs(seed: u64) -> Self {
        let mut cfg = Self::blobs_default(seed);
        cfg.dataset = DatasetSpec::BlobsSynthetic {
            n_classes: 3,
            n: 3000,
            shape: [1, 1, 128],
            spread: 0.6,
            imbalance: 1.0,
            seed,
        };
        cfg.model.dropout = vec![0.5];
        cfg.epochs = 40;
        cfg.optimizer.milestones = vec![20, 30];
        cfg.optimizer.factors = vec![0.1, 0.1];
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The β grid; `[0]` when no auxiliary loss is configured.
    pub fn beta_grid(&self) -> Vec<f64> {
        match &self.auxiliary {
            Some(AuxLossSpec::Macc { beta }) => beta.clone(),
            None => vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.split.validate()?;
        if self.split.val == 0.0 {
            return Err(Error::config("model selection needs a non-empty validation split"));
        }
        if self.model.arch == Arch::Custom {
            return Err(Error::config("arch must be mlp-small, cnn-small or resnet-tiny"));
        }
        if self.model.dropout.is_empty() {
            return Err(Error::config("dropout grid is empty"));
        }
        if let Some(&p) = self.model.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::config(format!("dropout rate {p} outside [0, 1)")));
        }
        let betas = self.beta_grid();
        if betas.is_empty() {
            return Err(Error::config("beta grid is empty"));
        }
        if let Some(&b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::config(format!("beta {b} must be finite and >= 0")));
        }
        if self.n_passes < 2 {
            return Err(Error::config("n_passes must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.bins == 0 {
            return Err(Error::config("bins must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.momentum) || o.weight_decay < 0.0 {
            return Err(Error::config("optimizer needs lr > 0, momentum in [0, 1), weight_decay >= 0"));
        }
        if o.milestones.len() != o.factors.len() {
            return Err(Error::config("milestones and factors differ in length"));
        }
        if o.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form; names run directories.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", self.hash()))
    }
}
