//! Accuracy and ECE of a trained model under every corruption kind at
//! severities 1 to 5, baseline against the alignment-regularized model.
//!
//! `cargo run --release --example corruption_sweep -- [seed]`

use macc::config::RunConfig;
use macc::data::{corrupt, load_dataset, split_dataset, CorruptionKind, CorruptionSpec};
use macc::losses::AuxLossSpec;
use macc::metrics::compute_ece;
use macc::train::{predict, train};

fn main() -> macc::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = RunConfig::desk_blobs(seed);
    let split = split_dataset(&load_dataset(&cfg.dataset, None)?, &cfg.split)?;
    let baseline = train(&cfg, &split)?.best_model;
    cfg.auxiliary = Some(AuxLossSpec::Macc { beta: vec![1.0] });
    let regularized = train(&cfg, &split)?.best_model;

    println!("{:<22} {:>17}  {:>17}", "", "baseline acc/ece", "macc acc/ece");
    for kind in CorruptionKind::ALL {
        for severity in 1..=5 {
            let spec = CorruptionSpec::new(kind, severity, seed)?;
            let data = corrupt(&split.test, &spec)?;
            let mut cells = Vec::new();
            for model in [&baseline, &regularized] {
                let batch = predict(model, &data)?;
                cells.push(format!("{:.4} / {:.4}", batch.accuracy(), compute_ece(&batch, cfg.bins)?));
            }
            println!("{:<22} {:>17}  {:>17}", spec.to_string(), cells[0], cells[1]);
        }
    }
    Ok(())
}
