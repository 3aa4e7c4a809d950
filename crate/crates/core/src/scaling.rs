//! Post-hoc temperature scaling fitted by grid search on hold-out NLL.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PredictionBatch;

/// The temperature grid: `0.1, 0.2, …, 10.0`. Zero is excluded.
pub fn temperature_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// `(T, hold-out NLL)` for every grid point, ascending in `T`.
    pub nll: Vec<(f64, f64)>,
}

impl TemperatureFit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fit: TemperatureFit = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if !(fit.temperature > 0.0 && fit.temperature.is_finite()) {
            return Err(Error::format(path, format!("temperature {} is not positive", fit.temperature)));
        }
        Ok(fit)
    }
}

fn log_softmax_at(row: ArrayView1<'_, f64>, label: usize, inv_t: f64) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) * inv_t;
    let lse = row.iter().map(|&z| (z * inv_t - max).exp()).sum::<f64>().ln() + max;
    row[label] * inv_t - lse
}

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn nll_at_temperature(logits: &Array2<f64>, labels: &[usize], t: f64) -> f64 {
    let inv_t = 1.0 / t;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_at(row, y, inv_t))
        .sum();
    total / labels.len() as f64
}

/// Picks the grid temperature with the lowest hold-out NLL; ties go to the smaller `T`.
pub fn fit_temperature(holdout: &PredictionBatch) -> Result<TemperatureFit> {
    if holdout.is_empty() {
        return Err(Error::domain("temperature fit needs a non-empty hold-out set"));
    }
    let logits = holdout
        .logits()
        .ok_or_else(|| Error::domain("temperature fit needs raw logits"))?;
    let nll: Vec<(f64, f64)> = temperature_grid()
        .into_iter()
        .map(|t| (t, nll_at_temperature(logits, holdout.labels(), t)))
        .collect();
    let mut best = nll[0];
    for &(t, v) in &nll[1..] {
        if v < best.1 {
            best = (t, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::numeric("hold-out NLL is not finite"));
    }
    Ok(TemperatureFit {
        temperature: best.0,
        nll,
    })
}

/// Rescales a batch's logits by `1 / t`. Predictions are unchanged.
pub fn apply_temperature(batch: &PredictionBatch, t: f64) -> Result<PredictionBatch> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("temperature must be positive and finite, got {t}")));
    }
    let logits = batch
        .logits()
        .ok_or_else(|| Error::domain("temperature scaling needs raw logits"))?;
    let scaled = PredictionBatch::from_logits(logits / t, batch.labels().to_vec())?;
    Ok(scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::E;

    /// Two-class batch whose label frequencies equal its softmax confidences,
    /// so NLL is minimized exactly at T = 1.
    fn calibrated(scale: f64) -> PredictionBatch {
        // p = 0.8 (logit gap ln 4) on 5 examples with 4 positives; p = 0.75 (ln 3) on 4 with 3.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (gap, n, pos) in [(4f64.ln(), 5, 4), (3f64.ln(), 4, 3)] {
            for i in 0..n {
                rows.push([gap * scale, 0.0]);
                labels.push(if i < pos { 0 } else { 1 });
            }
        }
        let logits = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        PredictionBatch::from_logits(logits, labels).unwrap()
    }

    fn oracle_argmin(batch: &PredictionBatch) -> f64 {
        let logits = batch.logits().unwrap();
        let mut best_t = f64::NAN;
        let mut best = f64::INFINITY;
        for i in 1..=100 {
            let t = i as f64 / 10.0;
            let mut nll = 0.0;
            for (row, &y) in logits.rows().into_iter().zip(batch.labels()) {
                let e: Vec<f64> = row.iter().map(|z| (z / t).exp()).collect();
                nll -= (e[y] / e.iter().sum::<f64>()).ln();
            }
            if nll < best {
                best = nll;
                best_t = t;
            }
        }
        best_t
    }

    #[test]
    fn calibrated_batch_fits_unit_temperature() {
        let b = calibrated(1.0);
        let fit = fit_temperature(&b).unwrap();
        assert_eq!(fit.temperature, 1.0);
        assert_eq!(fit.temperature, oracle_argmin(&b));
        assert_eq!(fit.nll.len(), 100);
    }

    #[test]
    fn doubling_logits_doubles_temperature() {
        let b = calibrated(2.0);
        assert_eq!(fit_temperature(&b).unwrap().temperature, 2.0);
        assert_eq!(oracle_argmin(&b), 2.0);
    }

    #[test]
    fn apply_temperature_cases() {
        let b = PredictionBatch::from_logits(array![[2.0, 0.0], [0.1, 0.3]], vec![0, 1]).unwrap();
        let same = apply_temperature(&b, 1.0).unwrap();
        assert_eq!(same.confidences(), b.confidences());
        let half = apply_temperature(&b, 2.0).unwrap();
        assert!((half.confidences()[[0, 0]] - E / (E + 1.0)).abs() < 1e-12);
        let hot = apply_temperature(&b, 1e6).unwrap();
        assert!(hot.confidences().iter().all(|p| (p - 0.5).abs() < 1e-6));
        assert_eq!(hot.predicted(), b.predicted());
        assert!(apply_temperature(&b, 0.0).is_err());
        assert!(apply_temperature(&b, -1.0).is_err());
    }

    #[test]
    fn fit_requires_logits_and_examples() {
        let b = PredictionBatch::from_confidences(array![[0.5, 0.5]], vec![0]).unwrap();
        assert!(fit_temperature(&b).is_err());
        let empty = PredictionBatch::from_logits(Array2::zeros((0, 2)), vec![]).unwrap();
        assert!(fit_temperature(&empty).is_err());
    }
}
