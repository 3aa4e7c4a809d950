//! The command layer behind the `macc` binary.
//!
//! Each command is an ordinary function so it can be driven from tests and
//! examples. `train` writes into `<output_dir>/run-<config hash>/`; the other
//! commands take a checkpoint and write next to it, so every artifact of a
//! run lives under that one directory.
//!
//! A `<dataset>` argument is either a partition name of the checkpoint's own
//! run (`train`, `holdout`, `val`, `test`) or a path to a TOML file holding a
//! dataset spec, which is loaded in full.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{corrupt, load_dataset, split_dataset, write_dump, CorruptionSpec, Dataset, DatasetSpec, LogitsDump};
use crate::error::{Error, Result};
use crate::mc::{self, McConfig};
use crate::metrics::{CalibrationReport, DEFAULT_BINS};
use crate::nn::{model_checksum, CalibratableModel, Checkpoint};
use crate::report::{gap_histogram, ConvergenceTable, GapHistogram, ReportBundle};
use crate::scaling::{apply_temperature, fit_temperature, TemperatureFit};
use crate::train::{grid_search, predict, CellSummary, TrainLog};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const TEMPERATURE_FILE: &str = "temperature.json";

/// What `train` left on disk.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub grid: Vec<CellSummary>,
}

/// Trains every (β, p) cell of the config, keeps the most accurate one on
/// validation and writes `checkpoint.json`, `train_log.jsonl`, `grid.json`,
/// a copy of the config and one log per cell.
pub fn cmd_train(config_path: &Path, data_root: Option<&Path>) -> Result<TrainArtifacts> {
    let cfg = RunConfig::load(config_path)?;
    let split = split_dataset(&load_dataset(&cfg.dataset, data_root)?, &cfg.split)?;
    let grid = grid_search(&cfg, &split)?;

    let run_dir = cfg.run_dir();
    let logs_dir = run_dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(|e| Error::io(&logs_dir, e))?;
    let cfg_copy = run_dir.join("config.toml");
    fs::copy(config_path, &cfg_copy).map_err(|e| Error::io(&cfg_copy, e))?;

    for out in &grid.outcomes {
        out.log.write(&logs_dir.join(format!("{}.jsonl", out.cell.label())))?;
    }
    let best = grid.best();
    let train_log = run_dir.join(TRAIN_LOG_FILE);
    best.log.write(&train_log)?;
    write_json(&run_dir.join("grid.json"), &grid.summaries)?;
    write_json(&run_dir.join("split.json"), &split.indices)?;

    let run = serde_json::json!({
        "config_hash": cfg.hash(),
        "config": cfg,
        "cell": best.cell,
        "best_epoch": best.best_epoch,
        "best_val_accuracy": best.best_val_accuracy,
    });
    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_model(&best.best_model, Some(run))?.save(&checkpoint)?;
    Ok(TrainArtifacts {
        run_dir,
        checkpoint,
        train_log,
        grid: grid.summaries,
    })
}

/// A trained model together with the run that produced it.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub model: CalibratableModel,
    pub config: RunConfig,
    pub run_dir: PathBuf,
}

impl LoadedRun {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let config = ckpt
            .run
            .as_ref()
            .and_then(|r| r.get("config"))
            .ok_or_else(|| Error::format(checkpoint, "checkpoint carries no run config"))
            .and_then(|v| {
                serde_json::from_value::<RunConfig>(v.clone()).map_err(|e| Error::format(checkpoint, e.to_string()))
            })?;
        let run_dir = checkpoint
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok(Self {
            model: ckpt.to_model()?,
            config,
            run_dir,
        })
    }

    /// Resolves a partition name or dataset-spec file; see the module docs.
    pub fn dataset(&self, arg: &str, data_root: Option<&Path>) -> Result<(String, Dataset)> {
        let data = match arg {
            "train" | "holdout" | "val" | "test" => {
                let split = split_dataset(&load_dataset(&self.config.dataset, data_root)?, &self.config.split)?;
                match arg {
                    "train" => split.train,
                    "holdout" => split.holdout,
                    "val" => split.val,
                    _ => split.test,
                }
            }
            path => {
                let path = Path::new(path);
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let spec: DatasetSpec = toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
                load_dataset(&spec, data_root)?
            }
        };
        let m = self.model.meta();
        if data.shape != m.input || data.n_classes != m.n_classes {
            return Err(Error::domain(format!(
                "dataset has shape {:?} and {} classes, model expects {:?} and {}",
                data.shape, data.n_classes, m.input, m.n_classes
            )));
        }
        let label = Path::new(arg)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_string());
        Ok((label, data))
    }

    fn reports_dir(&self) -> Result<PathBuf> {
        let dir = self.run_dir.join("reports");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

/// `--temperature` accepts a number or a path to a saved fit.
#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureArg {
    Value(f64),
    File(PathBuf),
}

impl TemperatureArg {
    pub fn parse(s: &str) -> Self {
        match s.parse::<f64>() {
            Ok(t) => TemperatureArg::Value(t),
            Err(_) => TemperatureArg::File(PathBuf::from(s)),
        }
    }

    pub fn resolve(&self) -> Result<f64> {
        match self {
            TemperatureArg::Value(t) if *t > 0.0 && t.is_finite() => Ok(*t),
            TemperatureArg::Value(t) => Err(Error::config(format!("temperature must be positive, got {t}"))),
            TemperatureArg::File(p) => Ok(TemperatureFit::load(p)?.temperature),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub corrupt: Vec<CorruptionSpec>,
    pub temperature: Option<TemperatureArg>,
    pub bins: Option<usize>,
}

/// Evaluates a checkpoint and writes a [`ReportBundle`] under `reports/`.
/// Returns the report path and the bundle.
pub fn cmd_eval(checkpoint: &Path, dataset: &str, args: &EvalArgs, data_root: Option<&Path>) -> Result<(PathBuf, ReportBundle)> {
    let n_bins = args.bins.unwrap_or(DEFAULT_BINS);
    if n_bins == 0 {
        return Err(Error::config("--bins must be positive"));
    }
    let temperature = args.temperature.as_ref().map(TemperatureArg::resolve).transpose()?;
    let run = LoadedRun::load(checkpoint)?;
    let (label, data) = run.dataset(dataset, data_root)?;
    let hash = run.config.hash();
    let checksum = model_checksum(&run.model);

    let scored = |d: &Dataset| -> Result<_> {
        let batch = predict(&run.model, d)?;
        match temperature {
            Some(t) => apply_temperature(&batch, t),
            None => Ok(batch),
        }
    };
    let mut bundle = ReportBundle::new(&hash, checksum, &label, temperature, &scored(&data)?, n_bins)?;
    for spec in &args.corrupt {
        bundle.add_ood(*spec, &scored(&corrupt(&data, spec)?)?)?;
    }
    if run.model.dropout_rate() > 0.0 {
        bundle.gap_histogram = Some(gap_table(&run, &data)?);
    }
    let log_path = run.run_dir.join(TRAIN_LOG_FILE);
    if log_path.exists() {
        let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        bundle.convergence = Some(ConvergenceTable {
            config_hash: hash.clone(),
            rows: TrainLog::from_jsonl(&text)?.records,
        });
    }
    bundle.check_ranges()?;

    let tag = format!("{dataset}|{:?}|{temperature:?}|{n_bins}", args.corrupt);
    let digest = Sha256::digest(tag.as_bytes());
    let suffix: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    let path = run.reports_dir()?.join(format!("eval-{label}-{suffix}.json"));
    fs::write(&path, bundle.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok((path, bundle))
}

/// Before/after summary of a temperature fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocSummary {
    pub temperature: f64,
    pub dataset: String,
    pub ece_before: f64,
    pub ece_after: f64,
    pub accuracy: f64,
    pub temperature_file: PathBuf,
}

/// Fits a temperature on `dataset` (normally `holdout`) and writes
/// `temperature.json` next to the checkpoint.
pub fn cmd_posthoc(checkpoint: &Path, dataset: &str, data_root: Option<&Path>) -> Result<PosthocSummary> {
    let run = LoadedRun::load(checkpoint)?;
    let (label, data) = run.dataset(dataset, data_root)?;
    let batch = predict(&run.model, &data)?;
    let fit = fit_temperature(&batch)?;
    let scaled = apply_temperature(&batch, fit.temperature)?;
    let bins = run.config.bins;
    let temperature_file = run.run_dir.join(TEMPERATURE_FILE);
    fit.save(&temperature_file)?;
    Ok(PosthocSummary {
        temperature: fit.temperature,
        dataset: label,
        ece_before: CalibrationReport::compute(&batch, bins)?.ece,
        ece_after: CalibrationReport::compute(&scaled, bins)?.ece,
        accuracy: scaled.accuracy(),
        temperature_file,
    })
}

#[derive(Debug, Clone)]
pub struct GapHistOutcome {
    pub path: PathBuf,
    pub histogram: GapHistogram,
    /// Set when the model has no dropout, so certainty is trivially 1.
    pub warning: Option<String>,
}

fn gap_table(run: &LoadedRun, data: &Dataset) -> Result<GapHistogram> {
    if data.is_empty() {
        return Err(Error::domain("gap histogram of an empty dataset"));
    }
    let cfg = McConfig {
        n_passes: run.config.n_passes,
        dropout_rate: run.model.dropout_rate(),
        seed: run.config.seed,
    };
    let features = run.model.extract_features(data.inputs.view())?;
    let est = mc::estimate(&features, &run.model, &cfg)?;
    gap_histogram(&run.config.hash(), &est, cfg.n_passes, cfg.dropout_rate)
}

/// Writes the `|c − s̄|` histogram for `dataset` under `reports/`.
pub fn cmd_gap_hist(checkpoint: &Path, dataset: &str, data_root: Option<&Path>) -> Result<GapHistOutcome> {
    let run = LoadedRun::load(checkpoint)?;
    let (label, data) = run.dataset(dataset, data_root)?;
    let histogram = gap_table(&run, &data)?;
    let warning = (run.model.dropout_rate() == 0.0)
        .then(|| "model has dropout rate 0: certainty is 1 everywhere and the gap is 1 - mean confidence".to_string());
    let path = run.reports_dir()?.join(format!("gap-{label}.json"));
    write_json(&path, &histogram)?;
    Ok(GapHistOutcome { path, histogram, warning })
}

/// Writes raw logits and labels for `dataset` to `out`. A fitted
/// `temperature.json` next to the checkpoint is recorded in the header.
pub fn cmd_dump(checkpoint: &Path, dataset: &str, out: &Path, data_root: Option<&Path>) -> Result<LogitsDump> {
    let run = LoadedRun::load(checkpoint)?;
    let (_, data) = run.dataset(dataset, data_root)?;
    let logits = run.model.forward_deterministic(data.inputs.view())?;
    let labels = data.labels.iter().map(|&y| y as u32).collect();
    let mut dump = LogitsDump::new(run.config.dataset.id(), model_checksum(&run.model), logits, labels)?;
    let t_file = run.run_dir.join(TEMPERATURE_FILE);
    if t_file.exists() {
        dump.temperature = Some(TemperatureFit::load(&t_file)?.temperature);
    }
    write_dump(out, &dump)?;
    Ok(dump)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Short machine-readable error class, used in the binary's error output.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Numeric(_) => "numeric",
        Error::Format { .. } => "format",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

/// Process exit code for an error: 2 for usage/config problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}
