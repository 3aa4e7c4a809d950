use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassStats, Dataset};
use crate::error::{Error, Result};

/// How a source dataset is partitioned.
///
/// `train + val + test` must equal 1. `holdout` is the fraction of the
/// training portion set aside for fitting a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub holdout: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            holdout: 0.1,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test, self.holdout];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config("split fractions must lie in [0, 1]"));
        }
        if (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "train + val + test must be 1, got {}",
                self.train + self.val + self.test
            )));
        }
        if self.train == 0.0 || self.holdout >= 1.0 {
            return Err(Error::config("training split would be empty"));
        }
        Ok(())
    }
}

/// Disjoint train / holdout / validation / test partitions of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    /// Carved from the training fraction; used only for temperature fitting.
    pub holdout: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub source: ClassStats,
    /// Source row indices of each partition, ascending.
    pub indices: SplitIndices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn portion(count: usize, fraction: f64) -> usize {
    ((count as f64 * fraction).round() as usize).min(count)
}

/// Splits `data` deterministically from `spec.seed`.
///
/// In stratified mode each class is shuffled and cut separately, so every
/// partition keeps the source class proportions up to rounding.
pub fn split_dataset(data: &Dataset, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::domain("cannot split an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); data.n_classes];
        for (i, &y) in data.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    } else {
        vec![(0..data.len()).collect()]
    };

    let mut idx = SplitIndices {
        train: Vec::new(),
        holdout: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let n_test = portion(group.len(), spec.test);
        let n_val = portion(group.len(), spec.val).min(group.len() - n_test);
        let (test, rest) = group.split_at(n_test);
        let (val, train_all) = rest.split_at(n_val);
        let n_hold = portion(train_all.len(), spec.holdout);
        let (holdout, train) = train_all.split_at(n_hold);
        idx.test.extend_from_slice(test);
        idx.val.extend_from_slice(val);
        idx.holdout.extend_from_slice(holdout);
        idx.train.extend_from_slice(train);
    }
    for part in [&mut idx.train, &mut idx.holdout, &mut idx.val, &mut idx.test] {
        part.sort_unstable();
    }
    if idx.train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    Ok(DatasetSplit {
        train: data.select(&idx.train),
        holdout: data.select(&idx.holdout),
        val: data.select(&idx.val),
        test: data.select(&idx.test),
        seed: spec.seed,
        source: ClassStats::of(data),
        indices: idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::imbalance_factor;
    use crate::nn::MapShape;
    use ndarray::Array2;

    fn toy(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect();
        let n = labels.len();
        let inputs = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        Dataset::new(inputs, labels, MapShape::new(1, 1, 1), counts.len()).unwrap()
    }

    #[test]
    fn disjoint_and_exhaustive() {
        let data = toy(&[50, 30, 20]);
        let s = split_dataset(&data, &SplitSpec::default()).unwrap();
        let mut all: Vec<usize> = [&s.indices.train, &s.indices.holdout, &s.indices.val, &s.indices.test]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_under_seed() {
        let data = toy(&[40, 40]);
        let spec = SplitSpec {
            seed: 3,
            ..SplitSpec::default()
        };
        assert_eq!(split_dataset(&data, &spec).unwrap(), split_dataset(&data, &spec).unwrap());
        let other = SplitSpec { seed: 4, ..spec };
        assert_ne!(
            split_dataset(&data, &spec).unwrap().indices,
            split_dataset(&data, &other).unwrap().indices
        );
    }

    #[test]
    fn stratified_preserves_imbalance() {
        // 540 / 200 = 2.7; every cut below divides both counts exactly.
        let data = toy(&[540, 200]);
        let spec = SplitSpec {
            train: 0.5,
            val: 0.25,
            test: 0.25,
            holdout: 0.2,
            stratified: true,
            seed: 1,
        };
        let s = split_dataset(&data, &spec).unwrap();
        let f = imbalance_factor(&data.class_histogram());
        for part in [&s.train, &s.holdout, &s.val, &s.test] {
            assert_eq!(imbalance_factor(&part.class_histogram()), f);
        }
        assert_eq!(s.source.imbalance_factor, f);
    }

    #[test]
    fn rejects_bad_fractions() {
        let data = toy(&[10, 10]);
        let spec = SplitSpec {
            train: 0.5,
            ..SplitSpec::default()
        };
        assert!(matches!(split_dataset(&data, &spec), Err(Error::Config(_))));
    }
}
