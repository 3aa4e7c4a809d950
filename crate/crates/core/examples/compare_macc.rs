//! Baseline vs MACC-regularized training on the desk blobs setting, over
//! several seeds, with in-domain and gaussian-noise (severity 3) metrics.
//!
//! `cargo run --release --example compare_macc -- [ce|fl] [seeds] [beta,...]`

use macc::config::RunConfig;
use macc::data::{corrupt, load_dataset, split_dataset, CorruptionKind, CorruptionSpec};
use macc::losses::{AuxLossSpec, TaskLossSpec};
use macc::metrics::CalibrationReport;
use macc::train::{grid_search, predict};

fn main() -> macc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let task = match args.get(1).map(String::as_str) {
        Some("fl") => TaskLossSpec::Fl { gamma: 3.0 },
        _ => TaskLossSpec::Ce,
    };
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let betas: Vec<f64> = args
        .get(3)
        .map(|s| s.split(',').filter_map(|b| b.parse().ok()).collect())
        .unwrap_or_else(|| vec![1.0]);

    let mut means = [[0.0; 5]; 2];
    for seed in 0..seeds {
        let mut cfg = RunConfig::desk_blobs(seed);
        cfg.task = task;
        let split = split_dataset(&load_dataset(&cfg.dataset, None)?, &cfg.split)?;
        let noisy = corrupt(&split.test, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, seed)?)?;
        for (row, aux) in [None, Some(AuxLossSpec::Macc { beta: betas.clone() })].into_iter().enumerate() {
            cfg.auxiliary = aux;
            let grid = grid_search(&cfg, &split)?;
            let best = grid.best();
            let batch = predict(&best.best_model, &split.test)?;
            let r = CalibrationReport::compute(&batch, cfg.bins)?;
            let ood = CalibrationReport::compute(&predict(&best.best_model, &noisy)?, cfg.bins)?;
            let conf = batch.max_confidences().iter().sum::<f64>() / batch.len() as f64;
            let name = if row == 0 { "baseline" } else { "macc" };
            println!(
                "seed {seed} {name:<8} beta {:<3} epoch {:>2}  acc {:.4}  conf {:.4}  ece {:.4}  sce {:.4}  ood-ece {:.4}",
                best.cell.beta, best.best_epoch, r.accuracy, conf, r.ece, r.sce, ood.ece
            );
            for (m, v) in means[row].iter_mut().zip([r.accuracy, conf, r.ece, r.sce, ood.ece]) {
                *m += v / seeds as f64;
            }
        }
    }
    for (name, m) in ["baseline", "macc"].iter().zip(means) {
        println!(
            "mean {name:<8} acc {:.4}  conf {:.4}  ece {:.4}  sce {:.4}  ood-ece {:.4}",
            m[0], m[1], m[2], m[3], m[4]
        );
    }
    Ok(())
}
