//! Machine-readable report tables: metrics, reliability and confidence
//! histograms, confidence–certainty gap histograms and convergence curves.
//!
//! Every table carries the hash of the config that produced the model so
//! that tables from different runs cannot be mixed up silently.

use serde::{Deserialize, Serialize};

use crate::data::CorruptionSpec;
use crate::error::{Error, Result};
use crate::mc::McEstimate;
use crate::metrics::{histogram_data, BinSummary, CalibrationReport, HistogramFilter, PredictionBatch};
use crate::train::EpochRecord;

pub const REPORT_FORMAT: &str = "macc-report/1";
pub const GAP_BINS: usize = 20;

/// The JSON schema every serialized [`ReportBundle`] satisfies.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report_bundle.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub config_hash: String,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodTable {
    pub config_hash: String,
    pub corruption: CorruptionSpec,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    pub config_hash: String,
    pub filter: HistogramFilter,
    pub rows: Vec<BinSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Distribution of `|c_ij − s̄_ij|` over every (example, class) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapHistogram {
    pub config_hash: String,
    pub n_passes: usize,
    pub dropout_rate: f64,
    pub n_values: usize,
    pub mean_gap: f64,
    pub rows: Vec<GapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub config_hash: String,
    pub rows: Vec<EpochRecord>,
}

/// Everything `eval` produces for one checkpoint and dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format: String,
    pub config_hash: String,
    /// Hex model checksum, as stored in logits dumps.
    pub model_checksum: String,
    pub dataset: String,
    pub temperature: Option<f64>,
    pub n_bins: usize,
    pub in_domain: MetricsTable,
    /// Sorted by corruption kind, then ascending severity.
    pub ood: Vec<OodTable>,
    pub reliability: HistogramTable,
    pub incorrect_histogram: HistogramTable,
    pub gap_histogram: Option<GapHistogram>,
    pub convergence: Option<ConvergenceTable>,
}

impl ReportBundle {
    /// In-domain tables for `batch`; OOD tables, gap histogram and convergence are added afterwards.
    pub fn new(
        config_hash: &str,
        model_checksum: u64,
        dataset: &str,
        temperature: Option<f64>,
        batch: &PredictionBatch,
        n_bins: usize,
    ) -> Result<Self> {
        let report = CalibrationReport::compute(batch, n_bins)?;
        let incorrect = histogram_data(batch, n_bins, HistogramFilter::IncorrectOnly)?;
        Ok(Self {
            format: REPORT_FORMAT.to_string(),
            config_hash: config_hash.to_string(),
            model_checksum: format!("{model_checksum:016x}"),
            dataset: dataset.to_string(),
            temperature,
            n_bins,
            reliability: HistogramTable {
                config_hash: config_hash.to_string(),
                filter: HistogramFilter::All,
                rows: report.bins.clone(),
            },
            incorrect_histogram: HistogramTable {
                config_hash: config_hash.to_string(),
                filter: HistogramFilter::IncorrectOnly,
                rows: incorrect.ledger.summaries(0),
            },
            in_domain: MetricsTable {
                config_hash: config_hash.to_string(),
                report,
            },
            ood: Vec::new(),
            gap_histogram: None,
            convergence: None,
        })
    }

    pub fn add_ood(&mut self, corruption: CorruptionSpec, batch: &PredictionBatch) -> Result<()> {
        self.ood.push(OodTable {
            config_hash: self.config_hash.clone(),
            corruption,
            report: CalibrationReport::compute(batch, self.n_bins)?,
        });
        self.ood
            .sort_by_key(|t| (t.corruption.kind, t.corruption.severity, t.corruption.seed));
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the documented ranges: rates in `[0, 1]`, everything finite.
    pub fn check_ranges(&self) -> Result<()> {
        let mut reports = vec![&self.in_domain.report];
        reports.extend(self.ood.iter().map(|t| &t.report));
        for r in reports {
            let mut values = vec![r.ece, r.sce, r.mce, r.accuracy];
            values.extend(r.auroc);
            values.extend(&r.classwise_ece);
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::numeric(format!("metric value {v} outside [0, 1]")));
            }
        }
        if self.ood.windows(2).any(|w| {
            let (a, b) = (&w[0].corruption, &w[1].corruption);
            (a.kind, a.severity) > (b.kind, b.severity)
        }) {
            return Err(Error::domain("OOD tables are not sorted by severity"));
        }
        Ok(())
    }
}

/// 20-bin histogram of `|c − s̄|` over `[0, 1]`; a gap of exactly 1 goes in the last bin.
pub fn gap_histogram(config_hash: &str, estimate: &McEstimate, n_passes: usize, dropout_rate: f64) -> Result<GapHistogram> {
    let n_values = estimate.certainty.len();
    if n_values == 0 {
        return Err(Error::domain("gap histogram of an empty dataset"));
    }
    let mut counts = [0usize; GAP_BINS];
    let mut sum = 0.0;
    for (&c, &s) in estimate.certainty.iter().zip(&estimate.mean_confidence) {
        let gap = (c - s).abs();
        if !gap.is_finite() {
            return Err(Error::numeric("non-finite confidence-certainty gap"));
        }
        sum += gap;
        counts[((gap * GAP_BINS as f64) as usize).min(GAP_BINS - 1)] += 1;
    }
    let rows = counts
        .iter()
        .enumerate()
        .map(|(b, &count)| GapRow {
            lower: b as f64 / GAP_BINS as f64,
            upper: (b + 1) as f64 / GAP_BINS as f64,
            count,
            fraction: count as f64 / n_values as f64,
        })
        .collect();
    Ok(GapHistogram {
        config_hash: config_hash.to_string(),
        n_passes,
        dropout_rate,
        n_values,
        mean_gap: sum / n_values as f64,
        rows,
    })
}
