//! Writes a model's test logits in the binary dump format, reads them back and
//! recomputes the metrics from the file alone.
//!
//! `cargo run --release --example dump_roundtrip -- [out.bin]`

use std::path::PathBuf;

use macc::config::RunConfig;
use macc::data::{load_dataset, read_dump, split_dataset, write_dump, LogitsDump};
use macc::nn::model_checksum;
use macc::metrics::CalibrationReport;
use macc::train::{predict, train};

fn main() -> macc::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("macc-test-logits.bin"));
    let cfg = RunConfig::blobs_default(0);
    let split = split_dataset(&load_dataset(&cfg.dataset, None)?, &cfg.split)?;
    let model = train(&cfg, &split)?.best_model;
    let batch = predict(&model, &split.test)?;

    let logits = batch.logits().expect("predictions carry logits").clone();
    let labels = batch.labels().iter().map(|&y| y as u32).collect();
    let dump = LogitsDump::new(cfg.dataset.id(), model_checksum(&model), logits, labels)?;
    write_dump(&out, &dump)?;
    println!(
        "wrote {} rows x {} classes, {} bytes (header {}) to {}",
        dump.len(),
        dump.n_classes(),
        dump.encoded_len(),
        dump.header_len(),
        out.display()
    );

    let back = read_dump(&out)?;
    assert_eq!(back, dump);
    let direct = CalibrationReport::compute(&batch, cfg.bins)?;
    let from_file = CalibrationReport::compute(&back.to_batch()?, cfg.bins)?;
    assert_eq!(direct, from_file);
    println!("round trip exact; accuracy {:.4}  ece {:.4}", from_file.accuracy, from_file.ece);
    Ok(())
}
