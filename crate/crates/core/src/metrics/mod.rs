//! Calibration and discrimination metrics.
//!
//! Every metric is computed from a [`PredictionBatch`] through a [`BinLedger`]:
//! equal-width bins over `[0, 1]`, left-closed/right-open with 1.0 folded into
//! the last bin. Empty bins contribute nothing to ECE/SCE and are skipped by MCE.

mod auroc;
mod binning;

pub use auroc::auroc_from_scores;
pub use binning::{bin_assign, histogram_data, BinLedger, BinMode, BinSummary, HistogramData, HistogramFilter};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, softmax};

/// Bin count used throughout evaluation unless overridden.
pub const DEFAULT_BINS: usize = 15;

const ROW_SUM_TOL: f64 = 1e-6;

/// Per-example logits (when known), confidence vectors, labels and argmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    logits: Option<Array2<f64>>,
    confidences: Array2<f64>,
    labels: Vec<usize>,
    predicted: Vec<usize>,
}

impl PredictionBatch {
    /// Builds a batch from raw logits; confidences are their row softmax.
    pub fn from_logits(logits: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric("non-finite logit"));
        }
        let confidences = softmax(logits.view());
        Self::build(Some(logits), confidences, labels)
    }

    /// Builds a batch from row-stochastic confidence vectors.
    pub fn from_confidences(confidences: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        Self::build(None, confidences, labels)
    }

    fn build(logits: Option<Array2<f64>>, confidences: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let (n, k) = confidences.dim();
        if labels.len() != n {
            return Err(Error::domain(format!("{n} rows but {} labels", labels.len())));
        }
        if k == 0 {
            return Err(Error::domain("confidence vectors need at least one class"));
        }
        for (i, row) in confidences.rows().into_iter().enumerate() {
            if row.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
                return Err(Error::domain(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!("row {i} sums to {sum}, not 1")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::domain(format!("label {bad} outside 0..{k}")));
        }
        let predicted = confidences.rows().into_iter().map(argmax).collect();
        Ok(Self {
            logits,
            confidences,
            labels,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.confidences.ncols()
    }

    pub fn logits(&self) -> Option<&Array2<f64>> {
        self.logits.as_ref()
    }

    pub fn confidences(&self) -> &Array2<f64> {
        &self.confidences
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn is_correct(&self, i: usize) -> bool {
        self.predicted[i] == self.labels[i]
    }

    pub fn max_confidence(&self, i: usize) -> f64 {
        self.confidences[[i, self.predicted[i]]]
    }

    pub fn max_confidences(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.max_confidence(i)).collect()
    }

    pub fn correctness(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_correct(i)).collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.correctness().iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PredictionBatch {
        PredictionBatch {
            logits: self.logits.as_ref().map(|l| l.select(Axis(0), indices)),
            confidences: self.confidences.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            predicted: indices.iter().map(|&i| self.predicted[i]).collect(),
        }
    }

    pub fn confidence_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.confidences.row(i)
    }
}

fn non_empty(batch: &PredictionBatch) -> Result<()> {
    if batch.is_empty() {
        Err(Error::domain("metric of an empty batch"))
    } else {
        Ok(())
    }
}

/// Expected calibration error of the max-class confidence.
pub fn compute_ece(batch: &PredictionBatch, n_bins: usize) -> Result<f64> {
    non_empty(batch)?;
    Ok(BinLedger::max_class(batch, n_bins, HistogramFilter::All)?.weighted_gap(0))
}

/// Maximum calibration error: the largest gap over non-empty max-class bins.
pub fn compute_mce(batch: &PredictionBatch, n_bins: usize) -> Result<f64> {
    non_empty(batch)?;
    Ok(BinLedger::max_class(batch, n_bins, HistogramFilter::All)?.max_gap(0))
}

/// ECE of each class's confidence entry against the indicator `label == j`.
pub fn classwise_ece(batch: &PredictionBatch, n_bins: usize) -> Result<Vec<f64>> {
    non_empty(batch)?;
    let ledger = BinLedger::class_wise(batch, n_bins)?;
    Ok((0..ledger.n_rows).map(|j| ledger.weighted_gap(j)).collect())
}

/// Static calibration error: class-wise ECE averaged over classes.
pub fn compute_sce(batch: &PredictionBatch, n_bins: usize) -> Result<f64> {
    let per_class = classwise_ece(batch, n_bins)?;
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Misclassification-detection AUROC: score is the max-class confidence,
/// positives are correct predictions.
pub fn compute_auroc(batch: &PredictionBatch) -> Result<f64> {
    auroc_from_scores(&batch.max_confidences(), &batch.correctness())
}

/// Every metric for one batch, plus the reliability ledger for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub sce: f64,
    pub mce: f64,
    /// `None` when every prediction is correct (or every one wrong).
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub classwise_ece: Vec<f64>,
    pub bins: Vec<BinSummary>,
    pub n_bins: usize,
    pub n_examples: usize,
}

impl CalibrationReport {
    pub fn compute(batch: &PredictionBatch, n_bins: usize) -> Result<Self> {
        non_empty(batch)?;
        let ledger = BinLedger::max_class(batch, n_bins, HistogramFilter::All)?;
        let classwise = classwise_ece(batch, n_bins)?;
        Ok(Self {
            ece: ledger.weighted_gap(0),
            sce: classwise.iter().sum::<f64>() / classwise.len() as f64,
            mce: ledger.max_gap(0),
            auroc: compute_auroc(batch).ok(),
            accuracy: batch.accuracy(),
            classwise_ece: classwise,
            bins: ledger.summaries(0),
            n_bins,
            n_examples: batch.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// A K=4 batch whose max-class confidences and correctness are prescribed.
    fn scored(max_conf: &[f64], correct: &[bool]) -> PredictionBatch {
        let k = 4;
        let mut conf = Array2::zeros((max_conf.len(), k));
        let mut labels = Vec::new();
        for (i, (&m, &ok)) in max_conf.iter().zip(correct).enumerate() {
            let rest = (1.0 - m) / (k - 1) as f64;
            assert!(rest < m);
            conf.row_mut(i).fill(rest);
            conf[[i, 0]] = m;
            labels.push(if ok { 0 } else { 1 });
        }
        PredictionBatch::from_confidences(conf, labels).unwrap()
    }

    #[test]
    fn ece_perfect_is_zero() {
        let b = PredictionBatch::from_confidences(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]).unwrap();
        assert_eq!(compute_ece(&b, 15).unwrap(), 0.0);
        assert_eq!(compute_mce(&b, 15).unwrap(), 0.0);
    }

    #[test]
    fn ece_and_mce_hand_instance() {
        let b = scored(&[0.9, 0.8, 0.3, 0.4], &[true, true, false, true]);
        assert!((compute_ece(&b, 2).unwrap() - 0.15).abs() < 1e-12);
        assert!((compute_mce(&b, 2).unwrap() - 0.15).abs() < 1e-12);
        let h = histogram_data(&b, 2, HistogramFilter::All).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
    }

    #[test]
    fn mce_takes_largest_gap() {
        // Bin 0: confidence 0.4, all wrong -> gap 0.4. Bin 1: confidence 0.9, 8/10 right -> gap 0.1.
        let mut conf = vec![0.4];
        let mut ok = vec![false];
        for i in 0..10 {
            conf.push(0.9);
            ok.push(i < 8);
        }
        let b = scored(&conf, &ok);
        assert!((compute_mce(&b, 2).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sce_two_example_instance() {
        // class 0: bin {0.7, 0.6}, A = 1/2, C = 0.65 -> 0.15
        // class 1: bin {0.3, 0.4}, A = 1/2, C = 0.35 -> 0.15
        let b = PredictionBatch::from_confidences(array![[0.7, 0.3], [0.6, 0.4]], vec![0, 1]).unwrap();
        assert!((compute_sce(&b, 1).unwrap() - 0.15).abs() < 1e-12);
        let b = PredictionBatch::from_confidences(array![[1.0, 0.0], [1.0, 0.0]], vec![0, 0]).unwrap();
        assert_eq!(compute_sce(&b, 15).unwrap(), 0.0);
    }

    #[test]
    fn classwise_symmetric_batch() {
        let b = PredictionBatch::from_confidences(
            array![[0.8, 0.2], [0.2, 0.8], [0.6, 0.4], [0.4, 0.6]],
            vec![0, 1, 1, 0],
        )
        .unwrap();
        let cw = classwise_ece(&b, 15).unwrap();
        assert!((cw[0] - cw[1]).abs() < 1e-12);

        // 3 examples, 1 bin: class 0 A = 2/3, C = (0.9+0.2+0.5)/3; class 1 A = 1/3, C = (0.1+0.8+0.5)/3.
        let b = PredictionBatch::from_confidences(array![[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]], vec![0, 0, 1])
            .unwrap();
        let cw = classwise_ece(&b, 1).unwrap();
        assert!((cw[0] - (2.0 / 3.0 - 1.6 / 3.0f64).abs()).abs() < 1e-12);
        assert!((cw[1] - (1.0 / 3.0 - 1.4 / 3.0f64).abs()).abs() < 1e-12);
    }

    #[test]
    fn incorrect_only_histogram() {
        let b = scored(&[0.9, 0.8], &[true, true]);
        let h = histogram_data(&b, 15, HistogramFilter::IncorrectOnly).unwrap();
        assert_eq!(h.ledger.n_examples, 0);
        assert!(h.counts.iter().all(|&c| c == 0));

        let b = PredictionBatch::from_confidences(array![[1.0, 0.0]], vec![0]).unwrap();
        let h = histogram_data(&b, 15, HistogramFilter::All).unwrap();
        assert_eq!(h.counts[14], 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn empty_batch_errors() {
        let b = PredictionBatch::from_confidences(Array2::zeros((0, 3)), vec![]).unwrap();
        assert!(compute_ece(&b, 15).is_err());
        assert!(compute_sce(&b, 15).is_err());
        assert!(compute_mce(&b, 15).is_err());
        assert!(classwise_ece(&b, 15).is_err());
        assert!(histogram_data(&b, 15, HistogramFilter::All).is_err());
        assert!(CalibrationReport::compute(&b, 15).is_err());
    }

    #[test]
    fn batch_validation() {
        assert!(PredictionBatch::from_confidences(array![[0.6, 0.6]], vec![0]).is_err());
        assert!(PredictionBatch::from_confidences(array![[0.5, 0.5]], vec![2]).is_err());
        assert!(PredictionBatch::from_confidences(array![[1.2, -0.2]], vec![0]).is_err());
        assert!(PredictionBatch::from_logits(array![[f64::NAN, 0.0]], vec![0]).is_err());
        let b = PredictionBatch::from_confidences(array![[0.4, 0.4, 0.2]], vec![0]).unwrap();
        assert_eq!(b.predicted(), &[0]);
    }

    #[test]
    fn auroc_on_batch() {
        let b = scored(&[0.9, 0.9, 0.3, 0.3], &[true, true, false, false]);
        assert_eq!(compute_auroc(&b).unwrap(), 1.0);
        let b = scored(&[0.9, 0.9], &[true, true]);
        assert!(compute_auroc(&b).is_err());
        assert!(CalibrationReport::compute(&b, 15).unwrap().auroc.is_none());
    }
}
