use ndarray::{Array2, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// A sampled inverted-dropout mask: kept units are scaled by `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// 1.0 where the unit is kept, 0.0 where dropped; `[n × d]`.
    pub keep: Array2<f64>,
    pub scale: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng>(n: usize, d: usize, rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(rate)?;
        let keep = Array2::from_shape_simple_fn((n, d), || {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                1.0
            }
        });
        Ok(Self {
            keep,
            scale: 1.0 / (1.0 - rate),
        })
    }

    /// Mask that keeps every unit, i.e. the identity.
    pub fn ones(n: usize, d: usize) -> Self {
        Self {
            keep: Array2::ones((n, d)),
            scale: 1.0,
        }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let scale = self.scale;
        Zip::from(features).and(&self.keep).map_collect(|&f, &k| f * k * scale)
    }

    pub fn kept_fraction(&self) -> f64 {
        self.keep.mean().unwrap_or(1.0)
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_rate_keeps_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DropoutMask::sample(100, 100, 0.5, &mut rng).unwrap();
        assert!((m.kept_fraction() - 0.5).abs() < 0.02);
        assert_eq!(m.scale, 2.0);
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DropoutMask::sample(4, 3, 0.0, &mut rng).unwrap();
        assert_eq!(m, DropoutMask::ones(4, 3));
    }

    #[test]
    fn rate_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(DropoutMask::sample(1, 1, 1.0, &mut rng).is_err());
        assert!(DropoutMask::sample(1, 1, -0.1, &mut rng).is_err());
    }
}
