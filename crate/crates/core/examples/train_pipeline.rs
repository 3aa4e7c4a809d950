//! The full command pipeline on a TOML config: train, evaluate on test, fit a
//! temperature on the hold-out partition, evaluate again with it.
//!
//! `cargo run --release --example train_pipeline -- [config.toml]`

use std::path::PathBuf;

use macc::cli::{self, EvalArgs, TemperatureArg};
use macc::train::CellStatus;

fn main() -> macc::Result<()> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk.toml")));
    let run = cli::cmd_train(&config, None)?;
    println!("run directory {}", run.run_dir.display());
    for s in &run.grid {
        match &s.status {
            CellStatus::Ok {
                best_epoch,
                best_val_accuracy,
                ..
            } => println!("  cell {:<18} best epoch {best_epoch:>2}  val acc {best_val_accuracy:.4}", s.cell.label()),
            CellStatus::Failed { error } => println!("  cell {:<18} failed: {error}", s.cell.label()),
        }
    }

    let (path, plain) = cli::cmd_eval(&run.checkpoint, "test", &EvalArgs::default(), None)?;
    let r = &plain.in_domain.report;
    println!("test      acc {:.4}  ece {:.4}  sce {:.4}  ({})", r.accuracy, r.ece, r.sce, path.display());

    let fit = cli::cmd_posthoc(&run.checkpoint, "holdout", None)?;
    println!("holdout   T = {}  ece {:.4} -> {:.4}", fit.temperature, fit.ece_before, fit.ece_after);

    let args = EvalArgs {
        temperature: Some(TemperatureArg::File(fit.temperature_file)),
        ..EvalArgs::default()
    };
    let (path, scaled) = cli::cmd_eval(&run.checkpoint, "test", &args, None)?;
    let r = &scaled.in_domain.report;
    println!("test + TS acc {:.4}  ece {:.4}  sce {:.4}  ({})", r.accuracy, r.ece, r.sce, path.display());
    Ok(())
}
