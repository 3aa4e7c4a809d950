//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. The oracles deliberately avoid the library's binning
//! ledger: each bin's members are collected explicitly and averaged.

#![allow(dead_code)]

use macc::metrics::PredictionBatch;
use ndarray::Array2;
use rand::Rng;

/// Random row-stochastic batch with `2 ≤ K ≤ max_k`, `1 ≤ n ≤ max_n`.
/// Weights are small integers so ties (within and across rows) are common.
pub fn random_batch<R: Rng>(rng: &mut R, max_n: usize, max_k: usize) -> PredictionBatch {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let mut conf = Array2::zeros((n, k));
    for mut row in conf.rows_mut() {
        let w: Vec<f64> = loop {
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0..=4) as f64).collect();
            if w.iter().sum::<f64>() > 0.0 {
                break w;
            }
        };
        let s: f64 = w.iter().sum();
        for (c, v) in row.iter_mut().zip(&w) {
            *c = v / s;
        }
    }
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    PredictionBatch::from_confidences(conf, labels).unwrap()
}

/// Argmax with ties to the lowest index.
pub fn oracle_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn rows(batch: &PredictionBatch) -> Vec<Vec<f64>> {
    batch.confidences().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn oracle_bin(c: f64, m: usize) -> usize {
    ((c * m as f64).floor() as usize).min(m - 1)
}

/// Per-bin `(count, |mean hit − mean score|)` for non-empty bins.
fn bin_gaps(scores: &[f64], hits: &[f64], m: usize) -> Vec<(usize, f64)> {
    (0..m)
        .filter_map(|b| {
            let members: Vec<usize> = (0..scores.len()).filter(|&i| oracle_bin(scores[i], m) == b).collect();
            if members.is_empty() {
                return None;
            }
            let n = members.len() as f64;
            let acc = members.iter().map(|&i| hits[i]).sum::<f64>() / n;
            let conf = members.iter().map(|&i| scores[i]).sum::<f64>() / n;
            Some((members.len(), (acc - conf).abs()))
        })
        .collect()
}

fn max_class(batch: &PredictionBatch) -> (Vec<f64>, Vec<f64>) {
    let mut scores = Vec::new();
    let mut hits = Vec::new();
    for (row, &y) in rows(batch).iter().zip(batch.labels()) {
        let p = oracle_argmax(row);
        scores.push(row[p]);
        hits.push(if p == y { 1.0 } else { 0.0 });
    }
    (scores, hits)
}

pub fn oracle_ece(batch: &PredictionBatch, m: usize) -> f64 {
    let (s, h) = max_class(batch);
    let n = s.len() as f64;
    bin_gaps(&s, &h, m).iter().map(|&(c, g)| c as f64 / n * g).sum()
}

pub fn oracle_mce(batch: &PredictionBatch, m: usize) -> f64 {
    let (s, h) = max_class(batch);
    bin_gaps(&s, &h, m).iter().map(|&(_, g)| g).fold(0.0, f64::max)
}

pub fn oracle_classwise(batch: &PredictionBatch, m: usize) -> Vec<f64> {
    let r = rows(batch);
    let n = r.len() as f64;
    (0..batch.n_classes())
        .map(|j| {
            let s: Vec<f64> = r.iter().map(|row| row[j]).collect();
            let h: Vec<f64> = batch.labels().iter().map(|&y| if y == j { 1.0 } else { 0.0 }).collect();
            bin_gaps(&s, &h, m).iter().map(|&(c, g)| c as f64 / n * g).sum()
        })
        .collect()
}

pub fn oracle_sce(batch: &PredictionBatch, m: usize) -> f64 {
    let cw = oracle_classwise(batch, m);
    cw.iter().sum::<f64>() / cw.len() as f64
}

/// Pairwise-comparison AUROC (correct = positive); `None` when undefined.
pub fn oracle_auroc(batch: &PredictionBatch) -> Option<f64> {
    let (s, h) = max_class(batch);
    let pos: Vec<f64> = (0..s.len()).filter(|&i| h[i] == 1.0).map(|i| s[i]).collect();
    let neg: Vec<f64> = (0..s.len()).filter(|&i| h[i] == 0.0).map(|i| s[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Naive softmax of a logit row.
pub fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Exhaustive NLL grid search over `T = 0.1 … 10.0`, ties to the smaller `T`.
pub fn oracle_temperature(batch: &PredictionBatch) -> f64 {
    let logits = batch.logits().unwrap();
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 1..=100 {
        let t = i as f64 / 10.0;
        let mut nll = 0.0;
        for (row, &y) in logits.rows().into_iter().zip(batch.labels()) {
            let z: Vec<f64> = row.iter().map(|v| v / t).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
            nll += lse - z[y];
        }
        nll /= batch.len() as f64;
        if nll < best.1 {
            best = (t, nll);
        }
    }
    best.0
}

/// Best-of-`reps` wall-clock ratio conventional / efficient for `n_passes`
/// MC passes over `inputs`, with the same masks on both routes.
pub fn mc_speedup(
    model: &macc::nn::CalibratableModel,
    inputs: &Array2<f64>,
    n_passes: usize,
    reps: usize,
) -> f64 {
    use macc::mc;
    use macc::nn::DropoutMask;
    use rand::SeedableRng;
    use std::time::Instant;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let masks: Vec<DropoutMask> = (0..n_passes)
        .map(|_| DropoutMask::sample(inputs.nrows(), model.feature_dim(), model.dropout_rate(), &mut rng).unwrap())
        .collect();
    let mut best_eff = f64::INFINITY;
    let mut best_conv = f64::INFINITY;
    for _ in 0..reps {
        let owned = masks.clone();
        let t = Instant::now();
        let f = model.extract_features(inputs.view()).unwrap();
        std::hint::black_box(mc::estimate_with_masks(&f, model, owned).unwrap());
        best_eff = best_eff.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(mc::estimate_conventional(inputs, model, &masks).unwrap());
        best_conv = best_conv.min(t.elapsed().as_secs_f64());
    }
    best_conv / best_eff
}
