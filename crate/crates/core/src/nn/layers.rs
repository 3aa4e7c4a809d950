//! Layers with hand-written backward passes.
//!
//! Activations travel between layers as `[n × features]` matrices; spatial
//! layers interpret each row as a `(channels, height, width)` map in
//! channel-major order. All parameters are stored as matrices (biases are
//! `1 × out`) so the optimizer and the checkpoint code can treat them uniformly.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer computing `x · weight + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
    /// `[in × out]`
    pub weight: Array2<f64>,
    /// `[1 × out]`
    pub bias: Array2<f64>,
}

impl Linear {
    /// Gaussian initialization with standard deviation `gain / sqrt(in)`; zero bias.
    pub fn init<R: Rng>(name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
        Self {
            name: name.to_string(),
            weight,
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.to_string(),
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        grad_out: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let grad_in = grad_out.dot(&self.weight.t());
        let grad_w = x.t().dot(&grad_out);
        let grad_b = grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        (grad_in, grad_w, grad_b)
    }
}

/// Spatial shape of an activation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub name: String,
    pub input: MapShape,
    pub out_channels: usize,
    /// `[in_channels·9 × out_channels]`, rows ordered (channel, ky, kx).
    pub weight: Array2<f64>,
    /// `[1 × out_channels]`
    pub bias: Array2<f64>,
}

impl Conv3x3 {
    pub fn init<R: Rng>(name: &str, input: MapShape, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = input.channels * 9;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        Self {
            name: name.to_string(),
            input,
            out_channels,
            weight: Array2::from_shape_simple_fn((fan_in, out_channels), || normal.sample(rng)),
            bias: Array2::zeros((1, out_channels)),
        }
    }

    pub fn output(&self) -> MapShape {
        MapShape::new(self.out_channels, self.input.height, self.input.width)
    }

    /// Patch matrix `[h·w × c·9]` of one example.
    fn im2col(&self, row: &[f64]) -> Array2<f64> {
        let MapShape {
            channels,
            height,
            width,
        } = self.input;
        let mut cols = Array2::zeros((height * width, channels * 9));
        for y in 0..height {
            for x in 0..width {
                let mut dst = cols.row_mut(y * width + x);
                for c in 0..channels {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            dst[c * 9 + ky * 3 + kx] =
                                row[c * height * width + sy as usize * width + sx as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: ArrayView2<'_, f64>, out: &mut [f64]) {
        let MapShape {
            channels,
            height,
            width,
        } = self.input;
        for y in 0..height {
            for x in 0..width {
                let src = cols.row(y * width + x);
                for c in 0..channels {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            out[c * height * width + sy as usize * width + sx as usize] +=
                                src[c * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let out_shape = self.output();
        let plane = out_shape.plane();
        let mut out = Array2::zeros((x.nrows(), out_shape.len()));
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let row = row.to_vec();
            // [h·w × out_c]
            let y = self.im2col(&row).dot(&self.weight) + &self.bias;
            for o in 0..self.out_channels {
                dst.slice_mut(s![o * plane..(o + 1) * plane]).assign(&y.column(o));
            }
        }
        out
    }

    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        grad_out: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let plane = self.input.plane();
        let mut grad_in = Array2::zeros(x.raw_dim());
        let mut grad_w = Array2::zeros(self.weight.raw_dim());
        let mut grad_b = Array2::zeros(self.bias.raw_dim());
        for ((row, g), mut gin) in x
            .rows()
            .into_iter()
            .zip(grad_out.rows())
            .zip(grad_in.rows_mut())
        {
            let row = row.to_vec();
            let cols = self.im2col(&row);
            // [h·w × out_c]
            let mut gy = Array2::zeros((plane, self.out_channels));
            for o in 0..self.out_channels {
                gy.column_mut(o).assign(&g.slice(s![o * plane..(o + 1) * plane]));
            }
            grad_w += &cols.t().dot(&gy);
            grad_b += &gy.sum_axis(Axis(0)).insert_axis(Axis(0));
            let gcols = gy.dot(&self.weight.t());
            self.col2im(gcols.view(), gin.as_slice_mut().expect("standard layout"));
        }
        (grad_in, grad_w, grad_b)
    }
}

/// Layers making up a feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Linear(Linear),
    Conv(Conv3x3),
    Relu,
    /// 2×2 average pooling with stride 2.
    AvgPool2 { input: MapShape },
    /// Mean over each channel's spatial plane.
    GlobalAvgPool { input: MapShape },
    /// `x + body(x)`; the body must preserve the width of `x`.
    Residual { body: Vec<Layer> },
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Array2<f64>),
    Residual(Vec<LayerCache>),
}

impl Layer {
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::Conv(c) => c.forward(x),
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::AvgPool2 { input } => avg_pool2(*input, x),
            Layer::GlobalAvgPool { input } => global_avg_pool(*input, x),
            Layer::Residual { body } => {
                let mut h = x.to_owned();
                for layer in body {
                    h = layer.forward(h.view());
                }
                h + x
            }
        }
    }

    pub fn forward_cached(&self, x: Array2<f64>) -> (Array2<f64>, LayerCache) {
        match self {
            Layer::Residual { body } => {
                let mut caches = Vec::with_capacity(body.len());
                let mut h = x.clone();
                for layer in body {
                    let (next, cache) = layer.forward_cached(h);
                    caches.push(cache);
                    h = next;
                }
                (h + &x, LayerCache::Residual(caches))
            }
            _ => (self.forward(x.view()), LayerCache::Input(x)),
        }
    }

    /// Back-propagates `grad_out`, appending parameter gradients to `grads`
    /// in the same order as [`Layer::params`].
    pub fn backward(&self, cache: &LayerCache, grad_out: Array2<f64>, grads: &mut Vec<Array2<f64>>) -> Array2<f64> {
        match (self, cache) {
            (Layer::Linear(l), LayerCache::Input(x)) => {
                let (gi, gw, gb) = l.backward(x.view(), grad_out.view());
                grads.push(gw);
                grads.push(gb);
                gi
            }
            (Layer::Conv(c), LayerCache::Input(x)) => {
                let (gi, gw, gb) = c.backward(x.view(), grad_out.view());
                grads.push(gw);
                grads.push(gb);
                gi
            }
            (Layer::Relu, LayerCache::Input(x)) => {
                let mut g = grad_out;
                g.zip_mut_with(x, |gv, &xv| {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                });
                g
            }
            (Layer::AvgPool2 { input }, LayerCache::Input(_)) => avg_pool2_backward(*input, grad_out.view()),
            (Layer::GlobalAvgPool { input }, LayerCache::Input(_)) => {
                global_avg_pool_backward(*input, grad_out.view())
            }
            (Layer::Residual { body }, LayerCache::Residual(caches)) => {
                // Parameter gradients come out in reverse layer order; restore forward order.
                let mut body_grads: Vec<Vec<Array2<f64>>> = Vec::with_capacity(body.len());
                let mut g = grad_out.clone();
                for (layer, cache) in body.iter().zip(caches).rev() {
                    let mut local = Vec::new();
                    g = layer.backward(cache, g, &mut local);
                    body_grads.push(local);
                }
                for local in body_grads.into_iter().rev() {
                    grads.extend(local);
                }
                g + &grad_out
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    pub fn params(&self) -> Vec<(String, &Array2<f64>)> {
        match self {
            Layer::Linear(l) => vec![
                (format!("{}.weight", l.name), &l.weight),
                (format!("{}.bias", l.name), &l.bias),
            ],
            Layer::Conv(c) => vec![
                (format!("{}.weight", c.name), &c.weight),
                (format!("{}.bias", c.name), &c.bias),
            ],
            Layer::Residual { body } => body.iter().flat_map(|l| l.params()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Residual { body } => body.iter_mut().flat_map(|l| l.params_mut()).collect(),
            _ => Vec::new(),
        }
    }

    /// Output width given the input width, or an error when they do not fit.
    pub fn output_width(&self, input: usize) -> Result<usize> {
        let check = |expected: usize| {
            if expected == input {
                Ok(())
            } else {
                Err(Error::domain(format!("layer expects width {expected}, got {input}")))
            }
        };
        match self {
            Layer::Linear(l) => check(l.in_dim()).map(|_| l.out_dim()),
            Layer::Conv(c) => check(c.input.len()).map(|_| c.output().len()),
            Layer::Relu => Ok(input),
            Layer::AvgPool2 { input: shape } => {
                check(shape.len()).map(|_| shape.channels * (shape.height / 2) * (shape.width / 2))
            }
            Layer::GlobalAvgPool { input: shape } => check(shape.len()).map(|_| shape.channels),
            Layer::Residual { body } => {
                let mut w = input;
                for l in body {
                    w = l.output_width(w)?;
                }
                check(w).map(|_| input)
            }
        }
    }
}

fn avg_pool2(shape: MapShape, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h2, w2) = (shape.height / 2, shape.width / 2);
    let mut out = Array2::zeros((x.nrows(), shape.channels * h2 * w2));
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..shape.channels {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let base = c * shape.plane();
                    let at = |dy: usize, dx: usize| row[base + (2 * y + dy) * shape.width + 2 * xx + dx];
                    dst[c * h2 * w2 + y * w2 + xx] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * 0.25;
                }
            }
        }
    }
    out
}

fn avg_pool2_backward(shape: MapShape, g: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h2, w2) = (shape.height / 2, shape.width / 2);
    let mut out = Array2::zeros((g.nrows(), shape.len()));
    for (grow, mut dst) in g.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..shape.channels {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let v = grow[c * h2 * w2 + y * w2 + xx] * 0.25;
                    let base = c * shape.plane();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            dst[base + (2 * y + dy) * shape.width + 2 * xx + dx] = v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn global_avg_pool(shape: MapShape, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let plane = shape.plane();
    let mut out = Array2::zeros((x.nrows(), shape.channels));
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..shape.channels {
            dst[c] = row.slice(s![c * plane..(c + 1) * plane]).sum() / plane as f64;
        }
    }
    out
}

fn global_avg_pool_backward(shape: MapShape, g: ArrayView2<'_, f64>) -> Array2<f64> {
    let plane = shape.plane();
    let mut out = Array2::zeros((g.nrows(), shape.len()));
    for (grow, mut dst) in g.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..shape.channels {
            dst.slice_mut(s![c * plane..(c + 1) * plane]).fill(grow[c] / plane as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w ⊙ layer(x)))/dx and /dparams.
    fn check_layer(mut layer: Layer, width: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_simple_fn((2, width), || normal.sample(&mut rng));
        let out_w = layer.output_width(width).unwrap();
        let probe = Array2::from_shape_simple_fn((2, out_w), || normal.sample(&mut rng));
        let objective = |l: &Layer, x: &Array2<f64>| (l.forward(x.view()) * &probe).sum();

        let (_, cache) = layer.forward_cached(x.clone());
        let mut grads = Vec::new();
        let gx = layer.backward(&cache, probe.clone(), &mut grads);

        let h = 1e-6;
        for idx in [0, width / 2, width - 1] {
            let mut xp = x.clone();
            xp[[1, idx]] += h;
            let mut xm = x.clone();
            xm[[1, idx]] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            assert!((fd - gx[[1, idx]]).abs() < 1e-6, "input grad {idx}: {fd} vs {}", gx[[1, idx]]);
        }
        let n_params = layer.params().len();
        assert_eq!(n_params, grads.len());
        #[allow(clippy::needless_range_loop)]
        for p in 0..n_params {
            let cols = layer.params()[p].1.ncols();
            let analytic = grads[p][[0, cols - 1]];
            let bump = |layer: &mut Layer, d: f64| {
                layer.params_mut()[p][[0, cols - 1]] += d;
            };
            bump(&mut layer, h);
            let fp = objective(&layer, &x);
            bump(&mut layer, -2.0 * h);
            let fm = objective(&layer, &x);
            bump(&mut layer, h);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-6, "param {p}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check_layer(Layer::Linear(Linear::init("l", 5, 3, 1.0, &mut rng)), 5);
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = MapShape::new(2, 4, 4);
        check_layer(Layer::Conv(Conv3x3::init("c", shape, 3, &mut rng)), shape.len());
    }

    #[test]
    fn pool_gradients() {
        let shape = MapShape::new(2, 4, 4);
        check_layer(Layer::AvgPool2 { input: shape }, shape.len());
        check_layer(Layer::GlobalAvgPool { input: shape }, shape.len());
    }

    #[test]
    fn residual_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = MapShape::new(2, 3, 3);
        let body = vec![
            Layer::Conv(Conv3x3::init("a", shape, 2, &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv3x3::init("b", shape, 2, &mut rng)),
        ];
        check_layer(Layer::Residual { body }, shape.len());
    }

    #[test]
    fn conv_matches_direct_sum() {
        // Single channel 3×3 input, all-ones kernel: each output is the sum of its padded neighbourhood.
        let shape = MapShape::new(1, 3, 3);
        let conv = Conv3x3 {
            name: "c".into(),
            input: shape,
            out_channels: 1,
            weight: Array2::ones((9, 1)),
            bias: Array2::zeros((1, 1)),
        };
        let x = Array2::from_shape_vec((1, 9), (1..=9).map(f64::from).collect()).unwrap();
        let y = conv.forward(x.view());
        assert_eq!(y[[0, 4]], 45.0);
        assert_eq!(y[[0, 0]], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let l = Layer::Linear(Linear::zeros("l", 4, 2));
        assert!(l.output_width(3).is_err());
        assert_eq!(l.output_width(4).unwrap(), 2);
    }
}
