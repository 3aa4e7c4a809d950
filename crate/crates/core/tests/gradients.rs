//! Central finite differences against the hand-written backward passes.

use macc::config::RunConfig;
use macc::data::{load_dataset, DatasetSpec};
use macc::losses::{
    brier_loss, cross_entropy, flsd_loss, focal_loss, label_smoothing_loss, macc_loss, AuxLossSpec, LossGrad,
    TaskLossSpec,
};
use macc::nn::{Arch, CalibratableModel};
use macc::train::minibatch_gradients;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((n, k), |_| rng.random_range(0.05..1.0));
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

#[test]
fn task_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    type LossFn = Box<dyn Fn(&Array2<f64>, &[usize]) -> LossGrad>;
    let losses: Vec<(&str, LossFn)> = vec![
        ("ce", Box::new(|p, y| cross_entropy(p, y).unwrap())),
        ("ls", Box::new(|p, y| label_smoothing_loss(p, y, 0.1).unwrap())),
        ("fl", Box::new(|p, y| focal_loss(p, y, 2.0).unwrap())),
        ("flsd", Box::new(|p, y| flsd_loss(p, y).unwrap())),
        ("brier", Box::new(|p, y| brier_loss(p, y).unwrap())),
    ];
    for (name, f) in &losses {
        for _ in 0..20 {
            let p = random_probs(&mut rng, 4, 3);
            let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let g = f(&p, &y).grad;
            for idx in [(0, 0), (1, 2), (3, 1)] {
                // FLSD switches gamma at 0.2; skip points straddling the switch.
                if *name == "flsd" && (p[idx] - 0.2).abs() < 1e-4 {
                    continue;
                }
                let (mut a, mut b) = (p.clone(), p.clone());
                a[idx] += H;
                b[idx] -= H;
                let fd = (f(&a, &y).value - f(&b, &y).value) / (2.0 * H);
                assert!(rel_err(fd, g[idx]) < 1e-4, "{name} {idx:?}: fd {fd} vs {}", g[idx]);
            }
        }
    }
}

#[test]
fn macc_gradients_match_finite_differences_at_100_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 100 {
        let s = random_probs(&mut rng, 5, 3);
        let c = Array2::from_shape_fn((5, 3), |_| rng.random_range(0.0..1.0));
        let gaps = s.mean_axis(ndarray::Axis(0)).unwrap() - c.mean_axis(ndarray::Axis(0)).unwrap();
        if gaps.iter().any(|g| g.abs() < 1e-3) {
            continue;
        }
        let g = macc_loss(&s, &c).unwrap();
        let (i, j) = (rng.random_range(0..5), rng.random_range(0..3));
        let f = |s: &Array2<f64>, c: &Array2<f64>| macc_loss(s, c).unwrap().value;
        let (mut a, mut b) = (s.clone(), s.clone());
        a[[i, j]] += H;
        b[[i, j]] -= H;
        let fd_s = (f(&a, &c) - f(&b, &c)) / (2.0 * H);
        let (mut a, mut b) = (c.clone(), c.clone());
        a[[i, j]] += H;
        b[[i, j]] -= H;
        let fd_c = (f(&s, &a) - f(&s, &b)) / (2.0 * H);
        assert!(rel_err(fd_s, g.grad_mean_confidence[[i, j]]) < 1e-4);
        assert!(rel_err(fd_c, g.grad_certainty[[i, j]]) < 1e-4);
        checked += 1;
    }
}

/// Checks d(loss)/d(param) for a sample of entries of every parameter array,
/// with the dropout masks held fixed by cloning the mask RNG.
fn check_model_gradients(arch: Arch, shape: [usize; 3], task: TaskLossSpec, beta: f64) {
    let mut cfg = RunConfig::blobs_default(0);
    cfg.dataset = DatasetSpec::BlobsSynthetic {
        n_classes: 3,
        n: 12,
        shape,
        spread: 0.2,
        imbalance: 1.0,
        seed: 0,
    };
    cfg.task = task;
    cfg.n_passes = 4;
    cfg.auxiliary = Some(AuxLossSpec::Macc { beta: vec![beta] });
    let data = load_dataset(&cfg.dataset, None).unwrap();
    let inputs = data.inputs.slice(s![..6, ..]).to_owned();
    let labels = data.labels[..6].to_vec();
    let mut model = CalibratableModel::build(arch, data.shape, 3, 0.3, 1).unwrap();
    let rng = ChaCha8Rng::seed_from_u64(9);
    let loss = |m: &CalibratableModel| minibatch_gradients(m, &cfg, beta, &inputs, &labels, &mut rng.clone()).unwrap();
    let (_, grads) = loss(&model);

    let mut pick = ChaCha8Rng::seed_from_u64(3);
    let n_arrays = grads.0.len();
    for a in 0..n_arrays {
        let len = grads.0[a].len();
        for _ in 0..3 {
            let idx = pick.random_range(0..len);
            let analytic = grads.0[a].as_slice().unwrap()[idx];
            let orig = model.params_mut()[a].as_slice().unwrap()[idx];
            model.params_mut()[a].as_slice_mut().unwrap()[idx] = orig + H;
            let up = loss(&model).0.total;
            model.params_mut()[a].as_slice_mut().unwrap()[idx] = orig - H;
            let down = loss(&model).0.total;
            model.params_mut()[a].as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * H);
            assert!(
                rel_err(fd, analytic) < 1e-4 || (fd - analytic).abs() < 1e-8,
                "{arch} beta {beta} array {a} entry {idx}: fd {fd} vs analytic {analytic}"
            );
        }
    }
}

#[test]
fn end_to_end_gradients_mlp() {
    check_model_gradients(Arch::MlpSmall, [1, 1, 8], TaskLossSpec::Ce, 0.0);
    check_model_gradients(Arch::MlpSmall, [1, 1, 8], TaskLossSpec::Ce, 3.0);
    check_model_gradients(Arch::MlpSmall, [1, 1, 8], TaskLossSpec::Fl { gamma: 3.0 }, 3.0);
}

#[test]
fn end_to_end_gradients_conv() {
    check_model_gradients(Arch::CnnSmall, [2, 4, 4], TaskLossSpec::Ce, 2.0);
    check_model_gradients(Arch::ResnetTiny, [2, 4, 4], TaskLossSpec::Ls { alpha: 0.1 }, 2.0);
}
