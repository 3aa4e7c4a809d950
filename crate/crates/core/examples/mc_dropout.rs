//! Efficient vs conventional MC dropout: identical estimates under shared
//! masks, and the wall-clock saving from running the extractor once.
//!
//! `cargo run --release --example mc_dropout`

use std::time::Instant;

use macc::mc::{self, McConfig};
use macc::nn::{Arch, CalibratableModel, MapShape};
use ndarray::Array2;

/// Best-of-`reps` time of `f`, whose input is prepared outside the clock.
fn time<I, T>(reps: usize, mut prepare: impl FnMut() -> I, mut f: impl FnMut(I) -> T) -> f64 {
    (0..reps)
        .map(|_| {
            let input = prepare();
            let t = Instant::now();
            std::hint::black_box(f(input));
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn main() -> macc::Result<()> {
    let cfg = McConfig {
        n_passes: 10,
        dropout_rate: 0.3,
        seed: 1,
    };
    for (arch, shape) in [
        (Arch::MlpSmall, MapShape::new(1, 1, 128)),
        (Arch::CnnSmall, MapShape::new(3, 16, 16)),
        (Arch::ResnetTiny, MapShape::new(3, 16, 16)),
    ] {
        let model = CalibratableModel::build(arch, shape, 10, cfg.dropout_rate, 0)?;
        let x = Array2::from_shape_fn((256, shape.len()), |(i, j)| ((i * 13 + j * 7) % 23) as f64 / 23.0);
        let masks = cfg.sample_masks(x.nrows(), model.feature_dim())?;

        let features = model.extract_features(x.view())?;
        let efficient = mc::estimate_with_masks(&features, &model, masks.clone())?.estimate;
        let conventional = mc::estimate_conventional(&x, &model, &masks)?;
        assert_eq!(efficient, conventional);

        let t_eff = time(
            5,
            || masks.clone(),
            |m| {
                let f = model.extract_features(x.view()).unwrap();
                mc::estimate_with_masks(&f, &model, m).unwrap()
            },
        );
        let t_conv = time(5, || (), |_| mc::estimate_conventional(&x, &model, &masks).unwrap());
        let mean_c = efficient.certainty.mean().unwrap_or(0.0);
        println!(
            "{:<12} efficient {:>8.2} ms  conventional {:>8.2} ms  speedup {:>5.1}x  mean certainty {mean_c:.3}",
            arch.name(),
            t_eff * 1e3,
            t_conv * 1e3,
            t_conv / t_eff
        );
    }
    Ok(())
}
