//! Post-hoc temperature scaling: fit T on the hold-out partition by grid search
//! over hold-out NLL, then compare test metrics before and after. The head of
//! the trained model is scaled up first so that it is clearly overconfident.
//!
//! `cargo run --release --example temperature_scaling -- [logit scale]`

use macc::config::RunConfig;
use macc::data::{load_dataset, split_dataset};
use macc::metrics::CalibrationReport;
use macc::scaling::{apply_temperature, fit_temperature};
use macc::train::{predict, train};

fn main() -> macc::Result<()> {
    let scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let cfg = RunConfig::desk_blobs(0);
    let split = split_dataset(&load_dataset(&cfg.dataset, None)?, &cfg.split)?;
    let mut model = train(&cfg, &split)?.best_model;
    let params = model.params_mut();
    let n = params.len();
    for p in params.into_iter().skip(n - 2) {
        *p *= scale;
    }

    let fit = fit_temperature(&predict(&model, &split.holdout)?)?;
    for &(t, nll) in fit.nll.iter().filter(|(t, _)| (t * 10.0).round() as i64 % 10 == 0) {
        println!("T {t:>4.1}  hold-out nll {nll:.4}");
    }
    println!("fitted T = {}", fit.temperature);

    let test = predict(&model, &split.test)?;
    let before = CalibrationReport::compute(&test, cfg.bins)?;
    let after = CalibrationReport::compute(&apply_temperature(&test, fit.temperature)?, cfg.bins)?;
    for (name, r) in [("before", &before), ("after", &after)] {
        println!(
            "{name:<6} accuracy {:.4}  ece {:.4}  sce {:.4}  mce {:.4}",
            r.accuracy, r.ece, r.sce, r.mce
        );
    }
    Ok(())
}
