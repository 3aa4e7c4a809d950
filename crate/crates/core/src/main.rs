use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use macc::cli::{self, EvalArgs, TemperatureArg};
use macc::data::CorruptionSpec;

/// Calibration-aware training: train, evaluate, post-hoc calibrate, report.
///
/// Dataset files are resolved against $MACC_DATA_ROOT when a spec names no root.
#[derive(Parser)]
#[command(name = "macc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (beta, dropout) cell of a TOML config and keep the best.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a partition (train|holdout|val|test) or dataset-spec file.
    Eval {
        checkpoint: PathBuf,
        dataset: String,
        /// Corruption as kind:severity:seed; repeat for a severity sweep.
        #[arg(long = "corrupt", value_parser = parse_corruption)]
        corrupt: Vec<CorruptionSpec>,
        /// A temperature value or a temperature.json file.
        #[arg(long)]
        temperature: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Fit a temperature on a dataset (normally holdout); writes temperature.json.
    Posthoc { checkpoint: PathBuf, dataset: String },
    /// Histogram of |certainty - mean confidence| over all classes.
    GapHist { checkpoint: PathBuf, dataset: String },
    /// Write raw logits and labels in the binary dump format.
    Dump {
        checkpoint: PathBuf,
        dataset: String,
        out: PathBuf,
    },
}

fn parse_corruption(s: &str) -> Result<CorruptionSpec, String> {
    s.parse().map_err(|e: macc::Error| e.to_string())
}

fn run(cmd: Command) -> macc::Result<String> {
    Ok(match cmd {
        Command::Train { config } => {
            let a = cli::cmd_train(&config, None)?;
            format!("checkpoint {}\ntrain log {}", a.checkpoint.display(), a.train_log.display())
        }
        Command::Eval {
            checkpoint,
            dataset,
            corrupt,
            temperature,
            bins,
        } => {
            let args = EvalArgs {
                corrupt,
                temperature: temperature.as_deref().map(TemperatureArg::parse),
                bins,
            };
            let (path, b) = cli::cmd_eval(&checkpoint, &dataset, &args, None)?;
            let r = &b.in_domain.report;
            let mut out = format!(
                "accuracy {:.4}  ece {:.4}  sce {:.4}  mce {:.4}  auroc {}\n",
                r.accuracy,
                r.ece,
                r.sce,
                r.mce,
                r.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
            for t in &b.ood {
                out += &format!("{}  accuracy {:.4}  ece {:.4}\n", t.corruption, t.report.accuracy, t.report.ece);
            }
            out + &format!("report {}", path.display())
        }
        Command::Posthoc { checkpoint, dataset } => {
            let s = cli::cmd_posthoc(&checkpoint, &dataset, None)?;
            format!(
                "temperature {}  ece {:.4} -> {:.4}\n{}",
                s.temperature,
                s.ece_before,
                s.ece_after,
                s.temperature_file.display()
            )
        }
        Command::GapHist { checkpoint, dataset } => {
            let g = cli::cmd_gap_hist(&checkpoint, &dataset, None)?;
            if let Some(w) = &g.warning {
                eprintln!("warning: {w}");
            }
            format!("mean gap {:.4}\n{}", g.histogram.mean_gap, g.path.display())
        }
        Command::Dump {
            checkpoint,
            dataset,
            out,
        } => {
            let d = cli::cmd_dump(&checkpoint, &dataset, &out, None)?;
            format!("{} records, {} bytes -> {}", d.len(), d.encoded_len(), out.display())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = serde_json::json!({ "error": cli::error_kind(&e), "message": e.to_string() });
            eprintln!("{err}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
