use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MapShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    GaussianBlur,
    PixelDropout,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::PixelDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::GaussianBlur => "gaussian-blur",
            CorruptionKind::PixelDropout => "pixel-dropout",
        }
    }

    /// Noise std, blur sigma or dropped-pixel fraction for severities 1..=5.
    pub fn magnitudes(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.08, 0.12, 0.18, 0.26, 0.38],
            CorruptionKind::GaussianBlur => [0.4, 0.6, 0.7, 0.8, 1.0],
            CorruptionKind::PixelDropout => [0.05, 0.1, 0.2, 0.3, 0.45],
        }
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown corruption kind {s:?}")))
    }
}

/// A corruption kind at severity 1..=5 with its noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        let spec = Self { kind, severity, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::config(format!(
                "severity must be in 1..=5, got {}",
                self.severity
            )));
        }
        Ok(())
    }

    pub fn magnitude(&self) -> f64 {
        self.kind.magnitudes()[self.severity as usize - 1]
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind.name(), self.severity, self.seed)
    }
}

/// Parses `kind:severity:seed`; the seed may be omitted (defaults to 0).
impl FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(Error::config(format!("corruption {s:?} is not kind:severity[:seed]")));
        }
        let kind = parts[0].parse()?;
        let severity = parts[1]
            .parse::<u8>()
            .map_err(|_| Error::config(format!("bad severity {:?}", parts[1])))?;
        let seed = match parts.get(2) {
            Some(p) => p.parse().map_err(|_| Error::config(format!("bad seed {p:?}")))?,
            None => 0,
        };
        CorruptionSpec::new(kind, severity, seed)
    }
}

/// Returns a corrupted copy of `data`; labels are untouched and pixels stay in `[0, 1]`.
pub fn corrupt(data: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut out = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.magnitude();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, m).expect("positive std");
            out.inputs.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
        }
        CorruptionKind::PixelDropout => {
            // One draw per spatial location; all channels of a dropped pixel go to 0.
            let shape = data.shape;
            let plane = shape.height * shape.width;
            for mut row in out.inputs.rows_mut() {
                for p in 0..plane {
                    if rng.random::<f64>() < m {
                        for c in 0..shape.channels {
                            row[c * plane + p] = 0.0;
                        }
                    }
                }
            }
        }
        CorruptionKind::GaussianBlur => {
            let kernel = gaussian_kernel(m);
            for mut row in out.inputs.rows_mut() {
                let blurred = blur(row.as_slice().expect("standard layout"), data.shape, &kernel);
                row.assign(&ndarray::ArrayView1::from(&blurred));
            }
        }
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable blur with clamped edges; a spatial axis of length 1 is left alone.
fn blur(row: &[f64], shape: MapShape, kernel: &[f64]) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = row.to_vec();
    let mut out = row.to_vec();
    for c in 0..shape.channels {
        let base = c * h * w;
        if w > 1 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, kv) in kernel.iter().enumerate() {
                        let sx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += kv * row[base + y * w + sx];
                    }
                    tmp[base + y * w + x] = acc;
                }
            }
        }
        if h > 1 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, kv) in kernel.iter().enumerate() {
                        let sy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                        acc += kv * tmp[base + sy * w + x];
                    }
                    out[base + y * w + x] = acc;
                }
            }
        } else {
            out[base..base + h * w].copy_from_slice(&tmp[base..base + h * w]);
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn flat_images(n: usize) -> Dataset {
        let shape = MapShape::new(2, 4, 4);
        let inputs = Array2::from_shape_fn((n, shape.len()), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        Dataset::new(inputs, (0..n).map(|i| i % 2).collect(), shape, 2).unwrap()
    }

    #[test]
    fn parse_and_display() {
        let s: CorruptionSpec = "gaussian-noise:3:42".parse().unwrap();
        assert_eq!(s, CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 42).unwrap());
        assert_eq!(s.to_string(), "gaussian-noise:3:42");
        assert!(matches!("fog:3:1".parse::<CorruptionSpec>(), Err(Error::Config(_))));
        assert!("gaussian-noise:0:1".parse::<CorruptionSpec>().is_err());
        assert!("gaussian-noise:6:1".parse::<CorruptionSpec>().is_err());
        assert_eq!("pixel-dropout:2".parse::<CorruptionSpec>().unwrap().seed, 0);
    }

    #[test]
    fn severity_is_monotone() {
        for kind in CorruptionKind::ALL {
            let m = kind.magnitudes();
            assert!(m.windows(2).all(|w| w[0] < w[1]), "{kind:?}");
        }
    }

    #[test]
    fn labels_and_range_preserved() {
        let d = flat_images(6);
        for kind in CorruptionKind::ALL {
            for sev in 1..=5 {
                let c = corrupt(&d, &CorruptionSpec::new(kind, sev, 9).unwrap()).unwrap();
                assert_eq!(c.labels, d.labels);
                assert!(c.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_ne!(c.inputs, d.inputs, "{kind:?} severity {sev} left inputs unchanged");
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let d = flat_images(4);
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 2, 5).unwrap();
        assert_eq!(corrupt(&d, &spec).unwrap(), corrupt(&d, &spec).unwrap());
    }

    #[test]
    fn noise_grows_with_severity() {
        let shape = MapShape::new(1, 16, 16);
        let d = Dataset::new(Array2::from_elem((20, shape.len()), 0.5), vec![0; 20], shape, 2).unwrap();
        let spread = |sev| {
            let c = corrupt(&d, &CorruptionSpec::new(CorruptionKind::GaussianNoise, sev, 1).unwrap()).unwrap();
            (c.inputs - 0.5).mapv(|v| v * v).mean().unwrap().sqrt()
        };
        assert!(spread(5) > spread(1));
    }

    #[test]
    fn blur_keeps_constant_image() {
        let shape = MapShape::new(1, 4, 4);
        let d = Dataset::new(Array2::from_elem((1, 16), 0.3), vec![0], shape, 2).unwrap();
        let c = corrupt(&d, &CorruptionSpec::new(CorruptionKind::GaussianBlur, 5, 0).unwrap()).unwrap();
        assert!(c.inputs.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
