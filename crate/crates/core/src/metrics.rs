//! PSNR and SSIM.
//!
//! PSNR uses peak 1.0 (the pipeline normalizes images to `[0, 1]`) and is
//! capped at 99 dB so that "identical" is a finite, comparable value. SSIM
//! is the standard single-scale Gaussian-window variant: 11x11 window,
//! sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 at dynamic range 1.0, averaged over
//! all positions where the full window fits.

use crate::error::{Error, Result};
use crate::field::fft::pairwise_sum;
use crate::field::RealImage;

/// PSNR values at or above the cap are reported as exactly this.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR and SSIM of a reconstruction against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(reference: &RealImage, candidate: &RealImage) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reference, candidate, 1.0)?,
            ssim: ssim(reference, candidate)?,
        })
    }
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RealImage, b: &RealImage, peak: f64) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims(format!(
            "psnr: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let sq: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - y) * (x - y))
        .collect();
    let mse = pairwise_sum(&sq) / sq.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for r in -half..=half {
        for c in -half..=half {
            let d2 = (r * r + c * c) as f64;
            w.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean structural similarity. Requires both images in `[0, 1]`-ish range
/// and dimensions at least the window size (11).
pub fn ssim(a: &RealImage, b: &RealImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims("ssim: image dimensions differ"));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim requires images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let window = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let mut acc = Vec::with_capacity((h - 2 * half) * (w - 2 * half));
    for r in half..h - half {
        for c in half..w - half {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            let mut wi = 0;
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let wv = window[wi];
                    wi += 1;
                    let x = a.at(r + dr - half, c + dc - half);
                    let y = b.at(r + dr - half, c + dc - half);
                    mu_a += wv * x;
                    mu_b += wv * y;
                    aa += wv * x * x;
                    bb += wv * y * y;
                    ab += wv * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            acc.push(s);
        }
    }
    Ok(pairwise_sum(&acc) / acc.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = crate::rng::seeded_rng(seed);
        RealImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = random_image(16, 16, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = RealImage::constant(16, 16, 0.3);
        let b = RealImage::constant(16, 16, 0.4);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn psnr_matches_two_pass_oracle() {
        let (a, b) = (random_image(32, 32, 2), random_image(32, 32, 3));
        // Independent two-pass MSE: mean of diffs first, then variance-style
        // accumulation in a second pass over an explicit diff buffer.
        let diffs: Vec<f64> = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x - y)
            .collect();
        let mut mse = 0.0;
        for d in &diffs {
            mse += d * d / diffs.len() as f64;
        }
        let expected = 10.0 * (1.0 / mse).log10();
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn psnr_is_symmetric_and_monotone() {
        let a = random_image(16, 16, 4);
        let mut worse = a.clone();
        let mut bad = a.clone();
        for (i, v) in worse.values_mut().iter_mut().enumerate() {
            *v = (*v + if i % 2 == 0 { 0.05 } else { -0.05 }).clamp(0.0, 1.0);
        }
        for (i, v) in bad.values_mut().iter_mut().enumerate() {
            *v = (*v + if i % 2 == 0 { 0.2 } else { -0.2 }).clamp(0.0, 1.0);
        }
        assert_eq!(psnr(&a, &worse, 1.0).unwrap(), psnr(&worse, &a, 1.0).unwrap());
        assert!(psnr(&a, &worse, 1.0).unwrap() > psnr(&a, &bad, 1.0).unwrap());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = random_image(16, 16, 5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let (a, b) = (random_image(16, 16, 6), random_image(16, 16, 7));
        let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn constant_images_match_closed_form() {
        // All variance terms vanish, so SSIM reduces to the luminance term
        // (2*0.5*0.6 + C1) / (0.5^2 + 0.6^2 + C1) = 0.98361...
        let a = RealImage::constant(16, 16, 0.5);
        let b = RealImage::constant(16, 16, 0.6);
        let expected = (2.0 * 0.5 * 0.6 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn ssim_stays_in_range_and_prefers_self() {
        for seed in 0..5 {
            let a = random_image(16, 16, 100 + seed);
            let mut inverted = a.clone();
            for v in inverted.values_mut() {
                *v = 1.0 - *v;
            }
            let s = ssim(&a, &inverted).unwrap();
            assert!((-1.0..=1.0).contains(&s));
            assert!(s < ssim(&a, &a).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = random_image(16, 16, 8);
        let b = random_image(8, 8, 9);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(ssim(&a, &b).is_err());
        let tiny = random_image(8, 8, 10);
        assert!(ssim(&tiny, &tiny).is_err());
    }
}
