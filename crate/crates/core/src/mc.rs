//! Predictive mean confidence and certainty from MC dropout.
//!
//! The efficient estimator runs the feature extractor once and repeats only
//! `dropout → head` for every pass. Because dropout is the only stochastic
//! layer and it sits after the extractor, this gives exactly the same numbers
//! as running the whole network per pass with the same masks.

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{softmax, softmax_backward};
use crate::nn::{CalibratableModel, DropoutMask};

/// Uncertainty above which certainty is taken to be exactly zero.
const SATURATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_passes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_passes: 10,
            dropout_rate: 0.3,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_passes < 2 {
            return Err(Error::config(format!(
                "n_passes must be at least 2 to estimate a variance, got {}",
                self.n_passes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Draws one mask per pass from this config's seed.
    pub fn sample_masks(&self, n: usize, d: usize) -> Result<Vec<DropoutMask>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_passes)
            .map(|_| DropoutMask::sample(n, d, self.dropout_rate, &mut rng))
            .collect()
    }
}

/// `1 - tanh(u)`, evaluated as `2 / (1 + e^{2u})`; exactly 0 once `u > 20`.
pub fn certainty_from_uncertainty(u: f64) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::domain(format!("uncertainty must be finite and >= 0, got {u}")));
    }
    Ok(certainty(u))
}

fn certainty(u: f64) -> f64 {
    if u > SATURATION {
        0.0
    } else {
        2.0 / (1.0 + (2.0 * u).exp())
    }
}

/// d certainty / d u = -(1 - tanh²(u)) = -c (2 - c).
fn certainty_slope(u: f64, c: f64) -> f64 {
    if u > SATURATION {
        0.0
    } else {
        -c * (2.0 - c)
    }
}

/// Per-example per-class statistics of the MC logit distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean_logits: Array2<f64>,
    /// Softmax of `mean_logits`.
    pub mean_confidence: Array2<f64>,
    /// Bessel-corrected sample variance of the logits across passes.
    pub uncertainty: Array2<f64>,
    /// `1 - tanh(uncertainty)`.
    pub certainty: Array2<f64>,
}

impl McEstimate {
    /// Statistics of a stack of per-pass logits (at least two passes).
    pub fn from_pass_logits(passes: &[Array2<f64>]) -> Result<Self> {
        if passes.len() < 2 {
            return Err(Error::config("need at least two passes"));
        }
        let shape = passes[0].raw_dim();
        if passes.iter().any(|p| p.raw_dim() != shape) {
            return Err(Error::domain("passes differ in shape"));
        }
        if passes.iter().any(|p| p.iter().any(|z| !z.is_finite())) {
            return Err(Error::numeric("non-finite logits in MC pass"));
        }
        let n = passes.len() as f64;
        let mut mean = Array2::zeros(shape);
        for p in passes {
            mean += p;
        }
        mean /= n;
        let mut var = Array2::<f64>::zeros(shape);
        for p in passes {
            Zip::from(&mut var).and(p).and(&mean).for_each(|v, &z, &m| *v += (z - m) * (z - m));
        }
        var /= n - 1.0;
        let certainty = var.mapv(certainty);
        Ok(Self {
            mean_confidence: softmax(mean.view()),
            mean_logits: mean,
            uncertainty: var,
            certainty,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.mean_logits.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.mean_logits.ncols()
    }
}

/// Everything needed to back-propagate through an MC estimate.
#[derive(Debug, Clone)]
pub struct McTrace {
    pub estimate: McEstimate,
    pub pass_logits: Vec<Array2<f64>>,
    pub masks: Vec<DropoutMask>,
}

/// Efficient MC dropout with masks drawn from `cfg`.
pub fn estimate(features: &Array2<f64>, model: &CalibratableModel, cfg: &McConfig) -> Result<McEstimate> {
    let masks = cfg.sample_masks(features.nrows(), features.ncols())?;
    Ok(estimate_with_masks(features, model, masks)?.estimate)
}

/// Efficient MC dropout: `model`'s head is applied to the fixed `features` once per mask.
pub fn estimate_with_masks(
    features: &Array2<f64>,
    model: &CalibratableModel,
    masks: Vec<DropoutMask>,
) -> Result<McTrace> {
    if features.ncols() != model.feature_dim() {
        return Err(Error::domain(format!(
            "features have width {}, head expects {}",
            features.ncols(),
            model.feature_dim()
        )));
    }
    check_masks(&masks, features.nrows(), features.ncols())?;
    let pass_logits: Vec<Array2<f64>> = masks.iter().map(|m| model.head_forward(features, m)).collect();
    let estimate = McEstimate::from_pass_logits(&pass_logits)?;
    Ok(McTrace {
        estimate,
        pass_logits,
        masks,
    })
}

/// Conventional MC dropout: the whole network runs once per mask.
pub fn estimate_conventional(
    inputs: &Array2<f64>,
    model: &CalibratableModel,
    masks: &[DropoutMask],
) -> Result<McEstimate> {
    check_masks(masks, inputs.nrows(), model.feature_dim())?;
    let pass_logits = masks
        .iter()
        .map(|m| model.forward_with_mask(inputs.view(), m))
        .collect::<Result<Vec<_>>>()?;
    McEstimate::from_pass_logits(&pass_logits)
}

fn check_masks(masks: &[DropoutMask], n: usize, d: usize) -> Result<()> {
    if masks.len() < 2 {
        return Err(Error::config(format!(
            "n_passes must be at least 2 to estimate a variance, got {}",
            masks.len()
        )));
    }
    if masks.iter().any(|m| m.keep.dim() != (n, d)) {
        return Err(Error::domain(format!("dropout masks must be {n} x {d}")));
    }
    Ok(())
}

/// Gradients produced by [`backward`].
#[derive(Debug, Clone)]
pub struct McGradients {
    pub head_weight: Array2<f64>,
    pub head_bias: Array2<f64>,
    pub features: Array2<f64>,
}

/// Back-propagates upstream gradients on `mean_confidence` and `certainty`
/// through every pass to the head parameters and the shared features.
pub fn backward(
    trace: &McTrace,
    features: &Array2<f64>,
    model: &CalibratableModel,
    grad_mean_confidence: &Array2<f64>,
    grad_certainty: &Array2<f64>,
) -> McGradients {
    let est = &trace.estimate;
    let n = trace.pass_logits.len() as f64;
    let grad_mean_logits = softmax_backward(est.mean_confidence.view(), grad_mean_confidence.view());
    let mut grad_u = Array2::zeros(est.uncertainty.raw_dim());
    Zip::from(&mut grad_u)
        .and(grad_certainty)
        .and(&est.uncertainty)
        .and(&est.certainty)
        .for_each(|g, &gc, &u, &c| *g = gc * certainty_slope(u, c));

    let head = model.head();
    let mut grad_w = Array2::zeros(head.weight.raw_dim());
    let mut grad_b = Array2::zeros(head.bias.raw_dim());
    let mut grad_f = Array2::zeros(features.raw_dim());
    for (z, mask) in trace.pass_logits.iter().zip(&trace.masks) {
        // d mean / d z_m = 1/N; d var / d z_m = 2 (z_m - mean) / (N - 1).
        let mut gz = &grad_mean_logits / n;
        Zip::from(&mut gz)
            .and(z)
            .and(&est.mean_logits)
            .and(&grad_u)
            .for_each(|g, &zv, &m, &gu| *g += gu * 2.0 * (zv - m) / (n - 1.0));
        let (gf, gw, gb) = model.head_backward(features, mask, gz.view());
        grad_w += &gw;
        grad_b += &gb;
        grad_f += &gf;
    }
    McGradients {
        head_weight: grad_w,
        head_bias: grad_b,
        features: grad_f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, MapShape};
    use ndarray::array;

    #[test]
    fn certainty_values() {
        assert_eq!(certainty_from_uncertainty(0.0).unwrap(), 1.0);
        assert!((certainty_from_uncertainty(0.5f64.atanh()).unwrap() - 0.5).abs() < 1e-12);
        assert!((certainty_from_uncertainty(0.9f64.atanh()).unwrap() - 0.1).abs() < 1e-12);
        assert!(certainty_from_uncertainty(1e6).unwrap().abs() < 1e-12);
        assert!((certainty_from_uncertainty(2.0).unwrap() - (1.0 - 2f64.tanh())).abs() < 1e-15);
        assert!(certainty_from_uncertainty(-1e-9).is_err());
        assert!(certainty_from_uncertainty(f64::INFINITY).is_err());
        assert!(certainty_from_uncertainty(f64::NAN).is_err());
    }

    #[test]
    fn two_pass_hand_case() {
        let est = McEstimate::from_pass_logits(&[array![[1.0]], array![[3.0]]]).unwrap();
        assert_eq!(est.mean_logits[[0, 0]], 2.0);
        assert_eq!(est.uncertainty[[0, 0]], 2.0);
        assert!((est.certainty[[0, 0]] - 0.0359).abs() < 1e-4);
    }

    #[test]
    fn identical_passes_have_full_certainty() {
        for a in [-3.0, 0.0, 7.5] {
            let est = McEstimate::from_pass_logits(&[array![[a, 1.0]], array![[a, 1.0]]]).unwrap();
            assert_eq!(est.uncertainty, Array2::<f64>::zeros((1, 2)));
            assert_eq!(est.certainty, Array2::<f64>::ones((1, 2)));
        }
    }

    #[test]
    fn config_validation() {
        let cfg = McConfig {
            n_passes: 1,
            ..McConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(McEstimate::from_pass_logits(&[array![[1.0]]]).is_err());
        assert!(matches!(
            McEstimate::from_pass_logits(&[array![[f64::NAN]], array![[1.0]]]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn all_ones_masks_zero_uncertainty() {
        let model = CalibratableModel::build(Arch::MlpSmall, MapShape::new(1, 1, 3), 3, 0.5, 4).unwrap();
        let x = array![[0.2, 0.4, 0.9], [0.5, 0.1, 0.3]];
        let f = model.extract_features(x.view()).unwrap();
        let masks = vec![DropoutMask::ones(2, model.feature_dim()); 2];
        let trace = estimate_with_masks(&f, &model, masks).unwrap();
        assert!(trace.estimate.uncertainty.iter().all(|&u| u == 0.0));
        assert!(trace.estimate.certainty.iter().all(|&c| c == 1.0));
        assert_eq!(trace.estimate.mean_logits, model.forward_deterministic(x.view()).unwrap());
    }
}
