//! Task losses, the confidence/certainty alignment loss and their composition.
//!
//! Every loss takes a row-stochastic confidence matrix and returns its value
//! together with the gradient with respect to those confidences. Chaining to
//! logits goes through [`crate::math::softmax_backward`].

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::McEstimate;

/// Lower clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// FLSD switches from γ = 5 to γ = 3 at this correct-class confidence.
pub const FLSD_THRESHOLD: f64 = 0.2;

/// A scalar loss and its gradient with respect to the confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Task loss selection, as written in run configs:
/// `{ kind = "ce" }`, `{ kind = "ls", alpha = 0.05 }`, `{ kind = "fl", gamma = 3 }`,
/// `{ kind = "flsd" }`, `{ kind = "brier" }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskLossSpec {
    Ce,
    Ls { alpha: f64 },
    Fl { gamma: f64 },
    Flsd,
    Brier,
}

impl TaskLossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskLossSpec::Ls { alpha } if !(0.0..1.0).contains(&alpha) => {
                Err(Error::config(format!("label smoothing alpha {alpha} outside [0, 1)")))
            }
            TaskLossSpec::Fl { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                Err(Error::config(format!("focal gamma {gamma} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, confidences: &Array2<f64>, labels: &[usize]) -> Result<LossGrad> {
        match *self {
            TaskLossSpec::Ce => cross_entropy(confidences, labels),
            TaskLossSpec::Ls { alpha } => label_smoothing_loss(confidences, labels, alpha),
            TaskLossSpec::Fl { gamma } => focal_loss(confidences, labels, gamma),
            TaskLossSpec::Flsd => flsd_loss(confidences, labels),
            TaskLossSpec::Brier => brier_loss(confidences, labels),
        }
    }

    pub fn short_name(&self) -> String {
        match *self {
            TaskLossSpec::Ce => "ce".into(),
            TaskLossSpec::Ls { alpha } => format!("ls{alpha}"),
            TaskLossSpec::Fl { gamma } => format!("fl{gamma}"),
            TaskLossSpec::Flsd => "flsd".into(),
            TaskLossSpec::Brier => "brier".into(),
        }
    }
}

/// Auxiliary loss selection: `{ kind = "macc", beta = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AuxLossSpec {
    Macc {
        #[serde(default = "default_beta_grid")]
        beta: Vec<f64>,
    },
}

pub fn default_beta_grid() -> Vec<f64> {
    vec![1.0, 5.0, 10.0, 15.0, 20.0, 25.0]
}

fn check_batch(confidences: &Array2<f64>, labels: &[usize]) -> Result<()> {
    let (n, k) = confidences.dim();
    if labels.len() != n {
        return Err(Error::domain(format!("{n} rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::domain("loss of an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::domain(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Per-example loss on the correct-class probability `p`: returns `(loss, d loss / d p)`.
fn per_label_loss<F>(confidences: &Array2<f64>, labels: &[usize], f: F) -> Result<LossGrad>
where
    F: Fn(f64) -> (f64, f64),
{
    check_batch(confidences, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(confidences.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = f(confidences[[i, y]]);
        total += l;
        grad[[i, y]] = g / n;
    }
    Ok(LossGrad {
        value: total / n,
        grad,
    })
}

/// `-ln p` with `p` clamped below; zero slope inside the clamp.
fn neg_log(p: f64) -> (f64, f64) {
    if p > LOG_CLAMP {
        (-p.ln(), -1.0 / p)
    } else {
        (-LOG_CLAMP.ln(), 0.0)
    }
}

fn focal_term(p: f64, gamma: f64) -> (f64, f64) {
    let (nl, dnl) = neg_log(p);
    let q = 1.0 - p;
    let weight = q.powf(gamma);
    // d/dp (1 - p)^γ = -γ (1 - p)^(γ - 1); its product with -ln p vanishes as p → 1.
    let dweight = if gamma == 0.0 || q <= 0.0 {
        0.0
    } else {
        -gamma * q.powf(gamma - 1.0)
    };
    (weight * nl, dweight * nl + weight * dnl)
}

/// Mean negative log-likelihood of the labelled class.
pub fn cross_entropy(confidences: &Array2<f64>, labels: &[usize]) -> Result<LossGrad> {
    per_label_loss(confidences, labels, neg_log)
}

/// Cross entropy against `(1 - α)·onehot + α/K`.
pub fn label_smoothing_loss(confidences: &Array2<f64>, labels: &[usize], alpha: f64) -> Result<LossGrad> {
    TaskLossSpec::Ls { alpha }.validate()?;
    check_batch(confidences, labels)?;
    let (n, k) = confidences.dim();
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    let off = alpha / k as f64;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..k {
            let t = if j == y { 1.0 - alpha + off } else { off };
            if t == 0.0 {
                continue;
            }
            let (nl, dnl) = neg_log(confidences[[i, j]]);
            total += t * nl;
            grad[[i, j]] = t * dnl / n as f64;
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

/// Mean of `-(1 - p)^γ · ln p` over the labelled-class probabilities.
pub fn focal_loss(confidences: &Array2<f64>, labels: &[usize], gamma: f64) -> Result<LossGrad> {
    TaskLossSpec::Fl { gamma }.validate()?;
    per_label_loss(confidences, labels, |p| focal_term(p, gamma))
}

/// Focal loss with γ = 5 when the correct-class confidence is below 0.2, else γ = 3.
pub fn flsd_loss(confidences: &Array2<f64>, labels: &[usize]) -> Result<LossGrad> {
    per_label_loss(confidences, labels, |p| {
        let gamma = if p < FLSD_THRESHOLD { 5.0 } else { 3.0 };
        focal_term(p, gamma)
    })
}

/// Mean over examples of the squared distance to the one-hot target.
pub fn brier_loss(confidences: &Array2<f64>, labels: &[usize]) -> Result<LossGrad> {
    check_batch(confidences, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(confidences.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for (j, &p) in confidences.row(i).iter().enumerate() {
            let d = p - if j == y { 1.0 } else { 0.0 };
            total += d * d;
            grad[[i, j]] = 2.0 * d / n;
        }
    }
    Ok(LossGrad {
        value: total / n,
        grad,
    })
}

/// Alignment loss value and its gradients with respect to `s̄` and `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaccGrad {
    pub value: f64,
    pub grad_mean_confidence: Array2<f64>,
    pub grad_certainty: Array2<f64>,
}

/// Mean over classes of `|mean_i s̄_i[j] − mean_i c_i[j]|` for one minibatch.
///
/// The sub-gradient at a zero class gap is taken to be zero.
pub fn macc_loss(mean_confidence: &Array2<f64>, certainty: &Array2<f64>) -> Result<MaccGrad> {
    if mean_confidence.dim() != certainty.dim() {
        return Err(Error::domain(format!(
            "mean confidence {:?} and certainty {:?} differ in shape",
            mean_confidence.dim(),
            certainty.dim()
        )));
    }
    let (m, k) = mean_confidence.dim();
    if m == 0 || k == 0 {
        return Err(Error::domain("alignment loss of an empty minibatch"));
    }
    let s_mean = mean_confidence.mean_axis(Axis(0)).expect("non-empty");
    let c_mean = certainty.mean_axis(Axis(0)).expect("non-empty");
    let mut value = 0.0;
    let mut slope = vec![0.0; k];
    for j in 0..k {
        let gap = s_mean[j] - c_mean[j];
        value += gap.abs();
        slope[j] = if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            -1.0
        } else {
            0.0
        } / (k as f64 * m as f64);
    }
    let grad_s = Array2::from_shape_fn((m, k), |(_, j)| slope[j]);
    let grad_c = -&grad_s;
    Ok(MaccGrad {
        value: value / k as f64,
        grad_mean_confidence: grad_s,
        grad_certainty: grad_c,
    })
}

/// Components of the composite training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub task_term: f64,
    pub macc_term: f64,
    pub beta: f64,
}

/// Composite loss with gradients on the MC estimate's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: LossValue,
    pub grad_mean_confidence: Array2<f64>,
    pub grad_certainty: Array2<f64>,
}

/// `task(s̄) + β · macc(s̄, c)`, with gradients.
pub fn compose_total_with_grad(
    task: &TaskLossSpec,
    estimate: &McEstimate,
    labels: &[usize],
    beta: f64,
) -> Result<TotalLoss> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::config(format!("beta must be finite and >= 0, got {beta}")));
    }
    task.validate()?;
    let t = task.evaluate(&estimate.mean_confidence, labels)?;
    let a = macc_loss(&estimate.mean_confidence, &estimate.certainty)?;
    let value = LossValue {
        total: t.value + beta * a.value,
        task_term: t.value,
        macc_term: a.value,
        beta,
    };
    if !value.total.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {value:?}")));
    }
    Ok(TotalLoss {
        value,
        grad_mean_confidence: t.grad + &(a.grad_mean_confidence * beta),
        grad_certainty: a.grad_certainty * beta,
    })
}

/// `task(s̄) + β · macc(s̄, c)`; the task loss consumes the predictive mean confidence.
pub fn compose_total(task: &TaskLossSpec, estimate: &McEstimate, labels: &[usize], beta: f64) -> Result<LossValue> {
    compose_total_with_grad(task, estimate, labels, beta).map(|t| t.value)
}
