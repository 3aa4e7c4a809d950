//! End-to-end runs of the command layer on small blobs configs.

use std::fs;
use std::path::{Path, PathBuf};

use macc::cli::{self, EvalArgs, TemperatureArg};
use macc::data::{read_dump, CorruptionKind, CorruptionSpec};
use macc::report::REPORT_SCHEMA;
use macc::Error;
use tempfile::TempDir;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 4
epochs = 4
n_passes = 4
output_dir = "{out}"
[dataset]
id = "blobs-synthetic"
n = 600
seed = 4
[model]
arch = "mlp-small"
dropout = [0.3]
[task]
kind = "ce"
[auxiliary]
kind = "macc"
beta = [1]
{extra}
"#,
        out = dir.join("runs").display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn trained() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let art = cli::cmd_train(&cfg, None).unwrap();
    (dir, art.checkpoint)
}

#[test]
fn train_writes_artifacts_under_hashed_run_dir() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let art = cli::cmd_train(&cfg_path, None).unwrap();
    let cfg = macc::config::RunConfig::load(&cfg_path).unwrap();
    assert_eq!(art.run_dir, cfg.run_dir());
    assert!(art.run_dir.ends_with(format!("run-{}", cfg.hash())));
    for f in ["checkpoint.json", "train_log.jsonl", "grid.json", "config.toml", "split.json"] {
        assert!(art.run_dir.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(&art.train_log).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn rerun_gives_byte_identical_log() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let art = cli::cmd_train(&cfg, None).unwrap();
    let first = fs::read(&art.train_log).unwrap();
    let ckpt1 = fs::read(&art.checkpoint).unwrap();
    let art = cli::cmd_train(&cfg, None).unwrap();
    assert_eq!(first, fs::read(art.train_log).unwrap());
    assert_eq!(ckpt1, fs::read(art.checkpoint).unwrap());
}

#[test]
fn negative_beta_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("beta = [1]", "beta = [-1]");
    fs::write(&cfg, text).unwrap();
    let err = cli::cmd_train(&cfg, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_ne!(cli::exit_code(&err), 0);
    assert!(!dir.path().join("runs").exists(), "no compute or output before validation");
}

#[test]
fn eval_report_validates_against_schema() {
    let (_dir, ckpt) = trained();
    let args = EvalArgs {
        corrupt: (1..=5)
            .rev()
            .map(|s| CorruptionSpec::new(CorruptionKind::GaussianNoise, s, 1).unwrap())
            .collect(),
        ..EvalArgs::default()
    };
    let (path, bundle) = cli::cmd_eval(&ckpt, "test", &args, None).unwrap();
    let sevs: Vec<u8> = bundle.ood.iter().map(|t| t.corruption.severity).collect();
    assert_eq!(sevs, vec![1, 2, 3, 4, 5]);
    assert_eq!(bundle.n_bins, 15);
    assert!(bundle.gap_histogram.is_some());
    assert_eq!(bundle.convergence.as_ref().unwrap().rows.len(), 4);

    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = instance.clone();
    broken["in_domain"]["report"]["ece"] = serde_json::json!(1.5);
    assert!(!validator.is_valid(&broken));
    let mut broken = instance;
    broken["reliability"].as_object_mut().unwrap().remove("config_hash");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn unit_temperature_matches_plain_eval() {
    let (_dir, ckpt) = trained();
    let (_, plain) = cli::cmd_eval(&ckpt, "test", &EvalArgs::default(), None).unwrap();
    let args = EvalArgs {
        temperature: Some(TemperatureArg::parse("1.0")),
        ..EvalArgs::default()
    };
    let (_, scaled) = cli::cmd_eval(&ckpt, "test", &args, None).unwrap();
    assert_eq!(plain.in_domain.report, scaled.in_domain.report);
}

#[test]
fn posthoc_file_keeps_accuracy() {
    let (_dir, ckpt) = trained();
    let summary = cli::cmd_posthoc(&ckpt, "holdout", None).unwrap();
    assert!(summary.temperature_file.exists());
    assert_eq!(summary.temperature_file.parent(), ckpt.parent());
    let (_, plain) = cli::cmd_eval(&ckpt, "test", &EvalArgs::default(), None).unwrap();
    let args = EvalArgs {
        temperature: Some(TemperatureArg::parse(summary.temperature_file.to_str().unwrap())),
        ..EvalArgs::default()
    };
    let (_, scaled) = cli::cmd_eval(&ckpt, "test", &args, None).unwrap();
    assert_eq!(plain.in_domain.report.accuracy, scaled.in_domain.report.accuracy);
    assert_eq!(scaled.temperature, Some(summary.temperature));
}

#[test]
fn eval_is_idempotent() {
    let (_dir, ckpt) = trained();
    let (p1, _) = cli::cmd_eval(&ckpt, "val", &EvalArgs::default(), None).unwrap();
    let a = fs::read(&p1).unwrap();
    let (p2, _) = cli::cmd_eval(&ckpt, "val", &EvalArgs::default(), None).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(a, fs::read(&p2).unwrap());
}

#[test]
fn gap_hist_and_dump() {
    let (dir, ckpt) = trained();
    let g = cli::cmd_gap_hist(&ckpt, "test", None).unwrap();
    assert!(g.warning.is_none());
    assert_eq!(g.histogram.rows.len(), 20);
    assert_eq!(g.histogram.rows.iter().map(|r| r.count).sum::<usize>(), g.histogram.n_values);

    let out = dir.path().join("test.dump");
    let d = cli::cmd_dump(&ckpt, "test", &out, None).unwrap();
    assert_eq!(fs::metadata(&out).unwrap().len() as usize, d.encoded_len());
    assert_eq!(read_dump(&out).unwrap(), d);
    assert_eq!(d.temperature, None);
}

#[test]
fn dataset_spec_file_and_mismatch() {
    let (dir, ckpt) = trained();
    let spec = dir.path().join("other.toml");
    fs::write(&spec, "id = \"blobs-synthetic\"\nn = 90\nseed = 4\n").unwrap();
    let (_, b) = cli::cmd_eval(&ckpt, spec.to_str().unwrap(), &EvalArgs::default(), None).unwrap();
    assert_eq!(b.in_domain.report.n_examples, 90);
    assert_eq!(b.dataset, "other");

    fs::write(&spec, "id = \"blobs-synthetic\"\nn = 90\nn_classes = 4\n").unwrap();
    let err = cli::cmd_eval(&ckpt, spec.to_str().unwrap(), &EvalArgs::default(), None).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
    assert!(cli::cmd_eval(&dir.path().join("missing.json"), "test", &EvalArgs::default(), None).is_err());
}

#[test]
fn deterministic_checkpoint_warns_in_gap_hist() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("dropout = [0.3]", "dropout = [0.0]")
        .replace("[auxiliary]\nkind = \"macc\"\nbeta = [1]\n", "");
    fs::write(&cfg, text).unwrap();
    let art = cli::cmd_train(&cfg, None).unwrap();
    let g = cli::cmd_gap_hist(&art.checkpoint, "test", None).unwrap();
    assert!(g.warning.is_some());
    let (_, bundle) = cli::cmd_eval(&art.checkpoint, "test", &EvalArgs::default(), None).unwrap();
    assert!(bundle.gap_histogram.is_none());
}
