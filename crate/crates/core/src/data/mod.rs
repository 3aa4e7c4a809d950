//! Datasets, deterministic splits, corruptions and the logits dump format.
//!
//! Inputs are stored as `[n × (c·h·w)]` matrices with pixel values in `[0, 1]`.

mod corrupt;
mod dump;
mod loaders;
mod split;

pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use dump::{read_dump, write_dump, LogitsDump, DUMP_MAGIC};
pub use loaders::{load_dataset, parse_cifar_bytes, DatasetSpec, DATA_ROOT_ENV};
pub use split::{split_dataset, DatasetSplit, SplitSpec};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MapShape;

/// A labelled set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub shape: MapShape,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, shape: MapShape, n_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::domain(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.ncols() != shape.len() {
            return Err(Error::domain(format!(
                "rows have width {}, shape {:?} needs {}",
                inputs.ncols(),
                shape,
                shape.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::domain(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            shape,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            n_classes: self.n_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Max over min class count; infinite when a class is absent.
pub fn imbalance_factor(histogram: &[usize]) -> f64 {
    let max = histogram.iter().copied().max().unwrap_or(0);
    let min = histogram.iter().copied().min().unwrap_or(0);
    if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    }
}

/// Summary of a dataset's class balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub histogram: Vec<usize>,
    pub imbalance_factor: f64,
}

impl ClassStats {
    pub fn of(data: &Dataset) -> Self {
        let histogram = data.class_histogram();
        Self {
            imbalance_factor: imbalance_factor(&histogram),
            histogram,
        }
    }
}
