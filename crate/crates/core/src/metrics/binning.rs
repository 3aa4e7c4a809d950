use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PredictionBatch;

/// Maps a confidence in `[0, 1]` to one of `n_bins` equal-width bins.
///
/// Bins are left-closed and right-open, except the last which also takes 1.0.
pub fn bin_assign(confidence: f64, n_bins: usize) -> Result<usize> {
    if n_bins == 0 {
        return Err(Error::domain("n_bins must be positive"));
    }
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::domain(format!(
            "confidence {confidence} outside [0, 1]"
        )));
    }
    let idx = (confidence * n_bins as f64).floor() as usize;
    Ok(idx.min(n_bins - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinMode {
    /// One row of bins over the max-class confidence.
    MaxClass,
    /// One row of bins per class, over that class's confidence entry.
    ClassWise,
}

/// Which examples go into a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramFilter {
    All,
    IncorrectOnly,
}

/// Per-bin accumulators behind ECE, SCE, MCE and the reliability plots.
///
/// Cells are stored row-major as `row * n_bins + bin`, where a row is a class
/// in class-wise mode and the single max-class row otherwise. For max-class
/// rows the accuracy sum counts correct predictions; for class-wise rows it
/// counts examples whose label is that class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLedger {
    pub n_bins: usize,
    pub mode: BinMode,
    pub n_rows: usize,
    pub n_examples: usize,
    pub counts: Vec<usize>,
    pub accuracy_sum: Vec<f64>,
    pub confidence_sum: Vec<f64>,
}

/// Aggregated view of one bin, as used by reliability diagrams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean accuracy in the bin, 0 when empty.
    pub accuracy: f64,
    /// Mean confidence in the bin, 0 when empty.
    pub confidence: f64,
}

impl BinLedger {
    pub fn new(n_bins: usize, mode: BinMode, n_rows: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::domain("n_bins must be positive"));
        }
        if n_rows == 0 {
            return Err(Error::domain("ledger needs at least one row"));
        }
        let cells = n_bins * n_rows;
        Ok(Self {
            n_bins,
            mode,
            n_rows,
            n_examples: 0,
            counts: vec![0; cells],
            accuracy_sum: vec![0.0; cells],
            confidence_sum: vec![0.0; cells],
        })
    }

    /// Max-class ledger from raw scores and correctness flags.
    pub fn from_scores(scores: &[f64], correct: &[bool], n_bins: usize) -> Result<Self> {
        if scores.len() != correct.len() {
            return Err(Error::domain(format!(
                "{} scores but {} correctness flags",
                scores.len(),
                correct.len()
            )));
        }
        let mut ledger = Self::new(n_bins, BinMode::MaxClass, 1)?;
        for (&s, &ok) in scores.iter().zip(correct) {
            ledger.record(0, s, if ok { 1.0 } else { 0.0 })?;
        }
        ledger.n_examples = scores.len();
        Ok(ledger)
    }

    /// Max-class ledger for a batch, optionally restricted to misclassified examples.
    pub fn max_class(batch: &PredictionBatch, n_bins: usize, filter: HistogramFilter) -> Result<Self> {
        let mut ledger = Self::new(n_bins, BinMode::MaxClass, 1)?;
        for i in 0..batch.len() {
            let correct = batch.is_correct(i);
            if filter == HistogramFilter::IncorrectOnly && correct {
                continue;
            }
            let conf = batch.max_confidence(i);
            ledger.record(0, conf, if correct { 1.0 } else { 0.0 })?;
            ledger.n_examples += 1;
        }
        Ok(ledger)
    }

    /// Class-wise ledger: every entry `s[j]` of every confidence row is binned in row `j`.
    pub fn class_wise(batch: &PredictionBatch, n_bins: usize) -> Result<Self> {
        let k = batch.n_classes();
        let mut ledger = Self::new(n_bins, BinMode::ClassWise, k)?;
        let labels = batch.labels();
        for (i, row) in batch.confidences().rows().into_iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                let hit = if labels[i] == j { 1.0 } else { 0.0 };
                ledger.record(j, s, hit)?;
            }
        }
        ledger.n_examples = batch.len();
        Ok(ledger)
    }

    fn record(&mut self, row: usize, confidence: f64, accuracy: f64) -> Result<()> {
        let bin = bin_assign(confidence, self.n_bins)?;
        let cell = row * self.n_bins + bin;
        self.counts[cell] += 1;
        self.accuracy_sum[cell] += accuracy;
        self.confidence_sum[cell] += confidence;
        Ok(())
    }

    /// Adds another ledger's accumulators into this one.
    pub fn merge(&mut self, other: &BinLedger) -> Result<()> {
        if self.n_bins != other.n_bins || self.mode != other.mode || self.n_rows != other.n_rows {
            return Err(Error::domain("cannot merge ledgers of different shape"));
        }
        self.n_examples += other.n_examples;
        for c in 0..self.counts.len() {
            self.counts[c] += other.counts[c];
            self.accuracy_sum[c] += other.accuracy_sum[c];
            self.confidence_sum[c] += other.confidence_sum[c];
        }
        Ok(())
    }

    pub fn row_counts(&self, row: usize) -> &[usize] {
        &self.counts[row * self.n_bins..(row + 1) * self.n_bins]
    }

    /// Absolute accuracy/confidence gap of a non-empty cell.
    fn gap(&self, cell: usize) -> Option<f64> {
        let n = self.counts[cell];
        (n > 0).then(|| {
            let n = n as f64;
            (self.accuracy_sum[cell] / n - self.confidence_sum[cell] / n).abs()
        })
    }

    /// `sum_bins |B|/N * |acc - conf|` for one row; 0 for an empty ledger.
    pub fn weighted_gap(&self, row: usize) -> f64 {
        if self.n_examples == 0 {
            return 0.0;
        }
        let total = self.n_examples as f64;
        (row * self.n_bins..(row + 1) * self.n_bins)
            .filter_map(|cell| self.gap(cell).map(|g| self.counts[cell] as f64 / total * g))
            .sum()
    }

    /// Largest gap over the non-empty bins of a row; 0 if all are empty.
    pub fn max_gap(&self, row: usize) -> f64 {
        (row * self.n_bins..(row + 1) * self.n_bins)
            .filter_map(|cell| self.gap(cell))
            .fold(0.0, f64::max)
    }

    pub fn summaries(&self, row: usize) -> Vec<BinSummary> {
        let width = 1.0 / self.n_bins as f64;
        (0..self.n_bins)
            .map(|b| {
                let cell = row * self.n_bins + b;
                let count = self.counts[cell];
                let (accuracy, confidence) = if count == 0 {
                    (0.0, 0.0)
                } else {
                    (
                        self.accuracy_sum[cell] / count as f64,
                        self.confidence_sum[cell] / count as f64,
                    )
                };
                BinSummary {
                    lower: b as f64 * width,
                    upper: if b + 1 == self.n_bins { 1.0 } else { (b + 1) as f64 * width },
                    count,
                    accuracy,
                    confidence,
                }
            })
            .collect()
    }
}

/// Plot-ready reliability / confidence-histogram data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub filter: HistogramFilter,
    pub ledger: BinLedger,
    pub counts: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
}

/// Per-bin counts, mean accuracy and mean confidence of the max-class score.
pub fn histogram_data(
    batch: &PredictionBatch,
    n_bins: usize,
    filter: HistogramFilter,
) -> Result<HistogramData> {
    if batch.is_empty() {
        return Err(Error::domain("histogram of an empty batch"));
    }
    let ledger = BinLedger::max_class(batch, n_bins, filter)?;
    let summaries = ledger.summaries(0);
    Ok(HistogramData {
        filter,
        counts: summaries.iter().map(|s| s.count).collect(),
        accuracy: summaries.iter().map(|s| s.accuracy).collect(),
        confidence: summaries.iter().map(|s| s.confidence).collect(),
        ledger,
    })
}
