//! Calibration metrics and reliability-diagram data for a small trained model:
//! ECE / SCE / MCE / AUROC, the per-bin table, and the confidence histogram of
//! the misclassified examples.
//!
//! `cargo run --release --example reliability -- [bins]`

use macc::config::RunConfig;
use macc::data::{load_dataset, split_dataset};
use macc::metrics::{histogram_data, CalibrationReport, HistogramFilter};
use macc::train::{predict, train};

fn main() -> macc::Result<()> {
    let bins: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = RunConfig::desk_blobs(0);
    let split = split_dataset(&load_dataset(&cfg.dataset, None)?, &cfg.split)?;
    let outcome = train(&cfg, &split)?;
    let batch = predict(&outcome.best_model, &split.test)?;

    let r = CalibrationReport::compute(&batch, bins)?;
    println!(
        "n {}  accuracy {:.4}  ece {:.4}  sce {:.4}  mce {:.4}  auroc {}",
        r.n_examples,
        r.accuracy,
        r.ece,
        r.sce,
        r.mce,
        r.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    println!("class-wise ece {:.4?}", r.classwise_ece);
    println!("\n{:>13}  {:>5}  {:>8}  {:>10}", "bin", "count", "accuracy", "confidence");
    for b in r.bins.iter().filter(|b| b.count > 0) {
        println!(
            "[{:.3}, {:.3})  {:>5}  {:>8.4}  {:>10.4}",
            b.lower, b.upper, b.count, b.accuracy, b.confidence
        );
    }

    let wrong = histogram_data(&batch, bins, HistogramFilter::IncorrectOnly)?;
    println!("\nmisclassified examples per confidence bin: {:?}", wrong.counts);
    Ok(())
}
