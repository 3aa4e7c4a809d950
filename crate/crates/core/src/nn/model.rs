use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dropout::{check_rate, DropoutMask};
use crate::nn::layers::{Conv3x3, Layer, LayerCache, Linear, MapShape};

/// Desk-scale architectures. Each is a feature extractor, one dropout layer, then a linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    MlpSmall,
    CnnSmall,
    ResnetTiny,
    /// Assembled by hand from parts; cannot be rebuilt from metadata alone.
    Custom,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::MlpSmall => "mlp-small",
            Arch::CnnSmall => "cnn-small",
            Arch::ResnetTiny => "resnet-tiny",
            Arch::Custom => "custom",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp-small" => Ok(Arch::MlpSmall),
            "cnn-small" => Ok(Arch::CnnSmall),
            "resnet-tiny" => Ok(Arch::ResnetTiny),
            other => Err(Error::config(format!(
                "unknown architecture {other:?} (expected mlp-small, cnn-small or resnet-tiny)"
            ))),
        }
    }
}

/// Metadata stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: Arch,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub input: MapShape,
    pub feature_dim: usize,
    pub n_params: usize,
    pub training_step: u64,
}

/// Gradients of every parameter, in [`CalibratableModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn zeros_like(model: &CalibratableModel) -> Self {
        Gradients(model.params().iter().map(|(_, p)| Array2::zeros(p.raw_dim())).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Forward state of the feature extractor kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ExtractorCache(Vec<LayerCache>);

/// A classifier `head(dropout(extractor(x)))` with exactly one stochastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratableModel {
    meta: ModelMeta,
    extractor: Vec<Layer>,
    head: Linear,
}

impl CalibratableModel {
    /// Builds a reproducibly initialized model.
    ///
    /// The extractor and the head draw from separate RNG streams so the
    /// extractor does not depend on the number of classes.
    pub fn build(arch: Arch, input: MapShape, n_classes: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        check_rate(dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = match arch {
            Arch::MlpSmall => mlp_small(input, &mut rng),
            Arch::CnnSmall => cnn_small(input, &mut rng)?,
            Arch::ResnetTiny => resnet_tiny(input, &mut rng)?,
            Arch::Custom => return Err(Error::config("custom models are assembled with from_parts")),
        };
        let feature_dim = extractor_width(&extractor, input.len())?;
        let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
        head_rng.set_stream(1);
        let head = Linear::init("head", feature_dim, n_classes, 1.0, &mut head_rng);
        Self::assemble(arch, input, dropout_rate, seed, extractor, head)
    }

    /// Assembles a model from an explicit extractor and head.
    /// An empty extractor makes the features equal to the inputs.
    pub fn from_parts(input: MapShape, dropout_rate: f64, extractor: Vec<Layer>, head: Linear) -> Result<Self> {
        check_rate(dropout_rate)?;
        Self::assemble(Arch::Custom, input, dropout_rate, 0, extractor, head)
    }

    fn assemble(
        arch: Arch,
        input: MapShape,
        dropout_rate: f64,
        seed: u64,
        extractor: Vec<Layer>,
        head: Linear,
    ) -> Result<Self> {
        let feature_dim = extractor_width(&extractor, input.len())?;
        if head.in_dim() != feature_dim {
            return Err(Error::domain(format!(
                "head expects {} features, extractor yields {feature_dim}",
                head.in_dim()
            )));
        }
        let mut model = Self {
            meta: ModelMeta {
                arch,
                n_classes: head.out_dim(),
                dropout_rate,
                seed,
                input,
                feature_dim,
                n_params: 0,
                training_step: 0,
            },
            extractor,
            head,
        };
        model.meta.n_params = model.params().iter().map(|(_, p)| p.len()).sum();
        Ok(model)
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn set_training_step(&mut self, step: u64) {
        self.meta.training_step = step;
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.meta.feature_dim
    }

    pub fn input_width(&self) -> usize {
        self.meta.input.len()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.meta.dropout_rate
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    fn check_input(&self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_width() {
            return Err(Error::domain(format!(
                "model expects inputs of width {}, got {}",
                self.input_width(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Runs the feature extractor.
    pub fn extract_features(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let mut h = inputs.to_owned();
        for layer in &self.extractor {
            h = layer.forward(h.view());
        }
        Ok(h)
    }

    pub fn extract_features_cached(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ExtractorCache)> {
        self.check_input(inputs)?;
        let mut h = inputs.to_owned();
        let mut caches = Vec::with_capacity(self.extractor.len());
        for layer in &self.extractor {
            let (next, cache) = layer.forward_cached(h);
            caches.push(cache);
            h = next;
        }
        Ok((h, ExtractorCache(caches)))
    }

    /// Logits of `head(mask(features))`.
    pub fn head_forward(&self, features: &Array2<f64>, mask: &DropoutMask) -> Array2<f64> {
        self.head.forward(mask.apply(features).view())
    }

    /// Logits with dropout disabled.
    pub fn forward_deterministic(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let features = self.extract_features(inputs)?;
        let logits = self.head.forward(features.view());
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric("non-finite logits"));
        }
        Ok(logits)
    }

    /// Logits of the whole network under an explicit dropout mask.
    pub fn forward_with_mask(&self, inputs: ArrayView2<'_, f64>, mask: &DropoutMask) -> Result<Array2<f64>> {
        let features = self.extract_features(inputs)?;
        Ok(self.head_forward(&features, mask))
    }

    /// Back-propagates one head pass. Returns `(grad_features, grad_weight, grad_bias)`.
    pub fn head_backward(
        &self,
        features: &Array2<f64>,
        mask: &DropoutMask,
        grad_logits: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let dropped = mask.apply(features);
        let (g_dropped, gw, gb) = self.head.backward(dropped.view(), grad_logits);
        (mask.apply(&g_dropped), gw, gb)
    }

    /// Back-propagates a feature gradient through the extractor.
    /// Returns the extractor's parameter gradients in forward order.
    pub fn extractor_backward(&self, cache: &ExtractorCache, grad_features: Array2<f64>) -> Vec<Array2<f64>> {
        let mut per_layer: Vec<Vec<Array2<f64>>> = Vec::with_capacity(self.extractor.len());
        let mut g = grad_features;
        for (layer, c) in self.extractor.iter().zip(&cache.0).rev() {
            let mut local = Vec::new();
            g = layer.backward(c, g, &mut local);
            per_layer.push(local);
        }
        per_layer.into_iter().rev().flatten().collect()
    }

    /// Combines extractor and head gradients into model order.
    pub fn gradients(&self, extractor: Vec<Array2<f64>>, head_weight: Array2<f64>, head_bias: Array2<f64>) -> Gradients {
        let mut all = extractor;
        all.push(head_weight);
        all.push(head_bias);
        Gradients(all)
    }

    /// Named parameters: extractor layers in order, then `head.weight`, `head.bias`.
    pub fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = self.extractor.iter().flat_map(|l| l.params()).collect();
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = self.extractor.iter_mut().flat_map(|l| l.params_mut()).collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

fn extractor_width(layers: &[Layer], input: usize) -> Result<usize> {
    let mut w = input;
    for l in layers {
        w = l.output_width(w)?;
    }
    Ok(w)
}

fn mlp_small(input: MapShape, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let gain = 2f64.sqrt();
    vec![
        Layer::Linear(Linear::init("fc1", input.len(), 64, gain, rng)),
        Layer::Relu,
        Layer::Linear(Linear::init("fc2", 64, 64, gain, rng)),
        Layer::Relu,
    ]
}

fn require_pool(input: MapShape) -> Result<()> {
    if input.height < 2 || input.width < 2 || !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return Err(Error::config(format!(
            "convolutional architectures need even spatial dims >= 2, got {}x{}",
            input.height, input.width
        )));
    }
    Ok(())
}

fn cnn_small(input: MapShape, rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    require_pool(input)?;
    let c1 = Conv3x3::init("conv1", input, 8, rng);
    let pooled = MapShape::new(8, input.height / 2, input.width / 2);
    let c2 = Conv3x3::init("conv2", pooled, 16, rng);
    let c2_out = c2.output();
    Ok(vec![
        Layer::Conv(c1),
        Layer::Relu,
        Layer::AvgPool2 {
            input: MapShape::new(8, input.height, input.width),
        },
        Layer::Conv(c2),
        Layer::Relu,
        Layer::GlobalAvgPool { input: c2_out },
        Layer::Linear(Linear::init("fc", 16, 32, 2f64.sqrt(), rng)),
        Layer::Relu,
    ])
}

fn resnet_tiny(input: MapShape, rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    require_pool(input)?;
    let width = 12;
    let stem = Conv3x3::init("stem", input, width, rng);
    let full = stem.output();
    let half = MapShape::new(width, input.height / 2, input.width / 2);
    let block = |name: &str, shape: MapShape, rng: &mut ChaCha8Rng| {
        // Second conv starts small so each block begins near the identity.
        let a = Conv3x3::init(&format!("{name}.conv1"), shape, width, rng);
        let mut b = Conv3x3::init(&format!("{name}.conv2"), shape, width, rng);
        b.weight *= 0.1;
        Layer::Residual {
            body: vec![Layer::Conv(a), Layer::Relu, Layer::Conv(b)],
        }
    };
    Ok(vec![
        Layer::Conv(stem),
        Layer::Relu,
        block("block1", full, rng),
        Layer::Relu,
        Layer::AvgPool2 { input: full },
        block("block2", half, rng),
        Layer::Relu,
        Layer::GlobalAvgPool { input: half },
    ])
}
