//! Additive Gaussian sensor noise.
//!
//! A level of `p` percent on images scaled to `[0, 1]` means zero-mean
//! Gaussian noise with standard deviation `p / 100` (so 1% noise has
//! sigma 0.01). Noisy magnitudes are kept as-is by default, including
//! negative excursions; clipping to `[0, inf)` is available behind a flag.

use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::rng::seeded_rng;
use rand_distr::{Distribution, Normal};

/// Noise level (percent of full scale) plus its seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
    /// Clamp noisy values at zero. Off by default: the measurement loss
    /// compares values inside a square, so negative samples are harmless.
    pub clip: bool,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Self {
        Self { level, seed, clip: false }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0)
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.level / 100.0
    }
}

/// Adds i.i.d. Gaussian noise to every pixel; deterministic in the seed.
pub fn add_noise(y: &RealImage, spec: &NoiseSpec) -> Result<RealImage> {
    if spec.level < 0.0 {
        return Err(Error::config(format!("noise level must be >= 0, got {}", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(y.clone());
    }
    let normal = Normal::new(0.0, spec.sigma()).expect("sigma > 0");
    let mut rng = seeded_rng(spec.seed);
    let values = y
        .values()
        .iter()
        .map(|&v| {
            let noisy = v + normal.sample(&mut rng);
            if spec.clip {
                noisy.max(0.0)
            } else {
                noisy
            }
        })
        .collect();
    RealImage::new(y.height(), y.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::fft::pairwise_sum;

    #[test]
    fn zero_level_is_identity() {
        let img = RealImage::constant(16, 16, 0.4);
        let out = add_noise(&img, &NoiseSpec::new(0.0, 99)).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn one_percent_is_sigma_001() {
        assert_eq!(NoiseSpec::new(1.0, 0).sigma(), 0.01);
        assert_eq!(NoiseSpec::new(5.0, 0).sigma(), 0.05);
    }

    #[test]
    fn sample_sigma_close_to_nominal() {
        // 5% noise on a 256x256 zero image: sample std within [0.0495, 0.0505].
        let img = RealImage::zeros(256, 256);
        let out = add_noise(&img, &NoiseSpec::new(5.0, 1234)).unwrap();
        let n = out.values().len() as f64;
        let mean = pairwise_sum(out.values()) / n;
        let sq: Vec<f64> = out.values().iter().map(|v| (v - mean) * (v - mean)).collect();
        let std = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
        assert!((0.0495..=0.0505).contains(&std), "sample std {std}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let img = RealImage::constant(8, 8, 0.5);
        let a = add_noise(&img, &NoiseSpec::new(2.0, 1)).unwrap();
        let b = add_noise(&img, &NoiseSpec::new(2.0, 1)).unwrap();
        let c = add_noise(&img, &NoiseSpec::new(2.0, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn clip_flag_floors_at_zero() {
        let img = RealImage::zeros(32, 32);
        let clipped = add_noise(&img, &NoiseSpec::new(10.0, 3).with_clip(true)).unwrap();
        assert!(clipped.values().iter().all(|&v| v >= 0.0));
        let raw = add_noise(&img, &NoiseSpec::new(10.0, 3)).unwrap();
        assert!(raw.values().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn negative_level_is_rejected() {
        let img = RealImage::zeros(4, 4);
        assert!(add_noise(&img, &NoiseSpec::new(-1.0, 0)).is_err());
    }
}
