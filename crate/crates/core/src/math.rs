//! Small row-wise numeric helpers shared by the metric, loss and model code.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Numerically stable softmax of a single row.
pub fn softmax_row(row: ArrayView1<'_, f64>, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row.iter()) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut dst) in logits.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        softmax_row(row, dst.as_slice_mut().expect("standard layout"));
    }
    out
}

/// Back-propagates a gradient on softmax outputs to the logits.
///
/// `probs` are the softmax outputs, `grad_probs` the upstream gradient.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, grad_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut dst) in probs
        .axis_iter(Axis(0))
        .zip(grad_probs.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for ((d, &pi), &gi) in dst.iter_mut().zip(p.iter()).zip(g.iter()) {
            *d = pi * (gi - dot);
        }
    }
    out
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}
