//! The forward acquisition model and its measurement loss.
//!
//! Each camera `l` sees `y_l = M_l(|A_l(x)| + noise)` where
//! `A_l = ifft2 . P_l . fft2` is the bandpass operator for pupil `P_l` and
//! `M_l` is the camera's binary subsampling mask. Because the masks are
//! binary, taking the magnitude before or after masking is the same thing;
//! stored measurements keep masked pixels at exactly zero.

pub mod store;

use crate::error::{Error, Result};
use crate::field::{
    add_noise, fft2, ifft2, CameraArray, ComplexField, NoiseSpec, PupilMask, RealImage,
    SubsampleMask,
};
use crate::field::fft::pairwise_sum;
use crate::rng::derive_seed;
use rayon::prelude::*;

/// Per-camera magnitude measurements plus everything needed to replay them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    per_camera_y: Vec<RealImage>,
    masks: SubsampleMask,
    array: CameraArray,
    noise: NoiseSpec,
}

impl MeasurementSet {
    pub fn new(
        per_camera_y: Vec<RealImage>,
        masks: SubsampleMask,
        array: CameraArray,
        noise: NoiseSpec,
    ) -> Result<Self> {
        if per_camera_y.len() != array.num_cameras() || masks.num_cameras() != array.num_cameras()
        {
            return Err(Error::dims(format!(
                "expected {} cameras, got {} measurements and {} masks",
                array.num_cameras(),
                per_camera_y.len(),
                masks.num_cameras()
            )));
        }
        for (l, y) in per_camera_y.iter().enumerate() {
            if y.height() != array.height() || y.width() != array.width() {
                return Err(Error::dims(format!("camera {l} measurement has wrong dims")));
            }
            let mask = masks.camera(l);
            if y.values().iter().zip(mask).any(|(&v, &m)| m == 0 && v != 0.0) {
                return Err(Error::config(format!(
                    "camera {l} has nonzero values at masked pixels"
                )));
            }
        }
        Ok(Self { per_camera_y, masks, array, noise })
    }

    pub fn height(&self) -> usize {
        self.array.height()
    }

    pub fn width(&self) -> usize {
        self.array.width()
    }

    pub fn num_cameras(&self) -> usize {
        self.array.num_cameras()
    }

    pub fn camera_y(&self, l: usize) -> &RealImage {
        &self.per_camera_y[l]
    }

    pub fn masks(&self) -> &SubsampleMask {
        &self.masks
    }

    pub fn array(&self) -> &CameraArray {
        &self.array
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// `sum_l ||y_l||^2`, the loss of the all-zero estimate.
    pub fn total_energy(&self) -> f64 {
        self.per_camera_y
            .iter()
            .map(|y| {
                let sq: Vec<f64> = y.values().iter().map(|v| v * v).collect();
                pairwise_sum(&sq)
            })
            .sum()
    }
}

/// Bandpass operator for one camera: `ifft2(support . fft2(x))`.
pub fn apply_a(x: &ComplexField, pupil: &PupilMask) -> Result<ComplexField> {
    if x.height() != pupil.height() || x.width() != pupil.width() {
        return Err(Error::dims(format!(
            "field {}x{} vs pupil {}x{}",
            x.height(),
            x.width(),
            pupil.height(),
            pupil.width()
        )));
    }
    let mut spectrum = fft2(x)?;
    for (v, &m) in spectrum.values_mut().iter_mut().zip(pupil.support()) {
        if m == 0 {
            *v = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    ifft2(&spectrum)
}

/// Adjoint of [`apply_a`]. The FFTs are unitary and the support is real and
/// binary, so the operator is self-adjoint (and idempotent).
pub fn apply_a_adjoint(u: &ComplexField, pupil: &PupilMask) -> Result<ComplexField> {
    apply_a(u, pupil)
}

/// Simulates the full acquisition: per camera, bandpass, magnitude, noise
/// at the sensor, then subsampling. Deterministic in the mask and noise
/// seeds; camera `l` draws its noise from `derive_seed(noise.seed, l)`.
pub fn forward_measure(
    x: &RealImage,
    array: &CameraArray,
    masks: &SubsampleMask,
    noise: &NoiseSpec,
) -> Result<MeasurementSet> {
    if x.height() != array.height() || x.width() != array.width() {
        return Err(Error::dims("image dims do not match camera array"));
    }
    if masks.height() != array.height()
        || masks.width() != array.width()
        || masks.num_cameras() != array.num_cameras()
    {
        return Err(Error::dims("subsample mask does not match camera array"));
    }
    if noise.level < 0.0 {
        return Err(Error::config("noise level must be >= 0"));
    }
    let field = x.to_complex();
    let per_camera_y = array
        .pupils()
        .par_iter()
        .enumerate()
        .map(|(l, pupil)| {
            let magnitude = apply_a(&field, pupil)?.magnitude();
            let camera_noise = NoiseSpec {
                level: noise.level,
                seed: derive_seed(noise.seed, l as u64),
                clip: noise.clip,
            };
            let noisy = add_noise(&magnitude, &camera_noise)?;
            let mask = masks.camera(l);
            let values = noisy
                .values()
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
                .collect();
            RealImage::new(x.height(), x.width(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(per_camera_y, masks.clone(), array.clone(), *noise)
}

/// The measurement loss `sum_l || y_l - M_l(|A_l(x_est)|) ||^2`.
///
/// Per-camera terms are computed independently (parallel over cameras) and
/// reduced in fixed camera order with pairwise summation, so the value is
/// bit-identical for any thread count.
pub fn measurement_loss(x_est: &RealImage, m: &MeasurementSet) -> Result<f64> {
    if x_est.height() != m.height() || x_est.width() != m.width() {
        return Err(Error::dims("estimate dims do not match measurements"));
    }
    let field = x_est.to_complex();
    let per_camera: Vec<f64> = m
        .array()
        .pupils()
        .par_iter()
        .enumerate()
        .map(|(l, pupil)| {
            let magnitude = apply_a(&field, pupil)?.magnitude();
            let y = m.camera_y(l);
            let mask = m.masks().camera(l);
            let sq: Vec<f64> = y
                .values()
                .iter()
                .zip(magnitude.values())
                .zip(mask)
                .map(|((&yv, &mv), &keep)| {
                    if keep == 1 {
                        let d = yv - mv;
                        d * d
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(pairwise_sum(&sq))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&per_camera))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_camera_array, make_subsample_mask};
    use num_complex::Complex64;
    use rand::Rng;

    fn full_aperture(n: usize) -> CameraArray {
        let r = (2.0f64).sqrt() * (n as f64) / 2.0 + 1.0;
        make_camera_array(n, n, 1, r, 0.0).unwrap()
    }

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
        let mut rng = crate::rng::seeded_rng(seed);
        let values = (0..h * w)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        ComplexField::new(h, w, values).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = crate::rng::seeded_rng(seed);
        RealImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn inner(a: &ComplexField, b: &ComplexField) -> Complex64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x.conj() * y)
            .sum()
    }

    #[test]
    fn full_aperture_is_identity() {
        let arr = full_aperture(32);
        let x = random_field(32, 32, 1);
        let out = apply_a(&x, &arr.pupils()[0]).unwrap();
        for (a, b) in x.values().iter().zip(out.values()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn apply_a_is_linear() {
        let arr = make_camera_array(32, 32, 3, 4.0, 3.0).unwrap();
        let pupil = &arr.pupils()[4];
        let (u, v) = (random_field(32, 32, 2), random_field(32, 32, 3));
        let (alpha, beta) = (Complex64::new(1.3, -0.2), Complex64::new(-0.7, 0.4));
        let mut combo = ComplexField::zeros(32, 32);
        for i in 0..combo.values().len() {
            combo.values_mut()[i] = alpha * u.values()[i] + beta * v.values()[i];
        }
        let lhs = apply_a(&combo, pupil).unwrap();
        let (au, av) = (apply_a(&u, pupil).unwrap(), apply_a(&v, pupil).unwrap());
        for i in 0..lhs.values().len() {
            let rhs = alpha * au.values()[i] + beta * av.values()[i];
            assert!((lhs.values()[i] - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_only_pupil_keeps_the_mean() {
        // A constant image c has spectrum c*sqrt(h*w) at DC and zero
        // elsewhere, so any pupil containing DC reproduces the constant
        // field exactly: the inverse transform spreads the DC bin back
        // with 1/sqrt(h*w).
        let pupil = PupilMask::new(16, 16, (8.0, 8.0), 1.0).unwrap();
        let c = 0.37;
        let img = RealImage::constant(16, 16, c);
        let out = apply_a(&img.to_complex(), &pupil).unwrap();
        for v in out.values() {
            assert!((v - Complex64::new(c, 0.0)).norm() < 1e-13, "got {v}");
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        let arr = make_camera_array(32, 32, 3, 5.0, 4.0).unwrap();
        let pupil = &arr.pupils()[1];
        let (x, u) = (random_field(32, 32, 7), random_field(32, 32, 8));
        let lhs = inner(&apply_a(&x, pupil).unwrap(), &u);
        let rhs = inner(&x, &apply_a_adjoint(&u, pupil).unwrap());
        assert!(
            (lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0),
            "lhs {lhs}, rhs {rhs}"
        );
    }

    #[test]
    fn apply_a_is_a_projection() {
        let arr = make_camera_array(32, 32, 3, 5.0, 4.0).unwrap();
        let pupil = &arr.pupils()[8];
        let x = random_field(32, 32, 9);
        let once = apply_a(&x, pupil).unwrap();
        let twice = apply_a(&once, pupil).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_camera_reproduces_the_image() {
        let arr = full_aperture(16);
        let masks = make_subsample_mask(16, 16, 1, 100.0, 0).unwrap();
        let x = random_image(16, 16, 4);
        let m = forward_measure(&x, &arr, &masks, &NoiseSpec::noiseless()).unwrap();
        for (a, b) in x.values().iter().zip(m.camera_y(0).values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn magnitudes_are_phase_blind() {
        let arr = make_camera_array(32, 32, 3, 5.0, 4.0).unwrap();
        let x = random_image(32, 32, 5);
        let phase = Complex64::from_polar(1.0, 1.1);
        let mut rotated = x.to_complex();
        for v in rotated.values_mut() {
            *v *= phase;
        }
        for pupil in arr.pupils() {
            let a = apply_a(&x.to_complex(), pupil).unwrap().magnitude();
            let b = apply_a(&rotated, pupil).unwrap().magnitude();
            for (p, q) in a.values().iter().zip(b.values()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_two_step_oracle() {
        // Independent oracle: direct DFT sum, mask in the Fourier plane,
        // direct inverse DFT, magnitude, then subsample.
        let n = 32;
        let x = crate::synth::chart(n, n);
        let arr = make_camera_array(n, n, 3, 4.0, 3.0).unwrap();
        let masks = make_subsample_mask(n, n, 9, 40.0, 2).unwrap();
        let m = forward_measure(&x, &arr, &masks, &NoiseSpec::noiseless()).unwrap();

        let spectrum = crate::field::fft::oracles::dft2_oracle(&x.to_complex());
        for (l, pupil) in arr.pupils().iter().enumerate() {
            let mut masked = spectrum.clone();
            for (v, &keep) in masked.values_mut().iter_mut().zip(pupil.support()) {
                if keep == 0 {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            let inv = crate::field::fft::oracles::idft2_oracle(&masked);
            let y = m.camera_y(l);
            for r in 0..n {
                for c in 0..n {
                    let expected = if masks.camera(l)[r * n + c] == 1 {
                        inv.at(r, c).norm()
                    } else {
                        0.0
                    };
                    assert!(
                        (y.at(r, c) - expected).abs() < 1e-9,
                        "camera {l} pixel ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn loss_of_truth_is_zero() {
        let arr = make_camera_array(32, 32, 3, 5.0, 4.0).unwrap();
        let masks = make_subsample_mask(32, 32, 9, 30.0, 3).unwrap();
        let x = random_image(32, 32, 6);
        let m = forward_measure(&x, &arr, &masks, &NoiseSpec::noiseless()).unwrap();
        let loss = measurement_loss(&x, &m).unwrap();
        assert!(loss <= 1e-18, "loss {loss}");
    }

    #[test]
    fn loss_of_zero_is_total_energy() {
        let arr = make_camera_array(32, 32, 3, 5.0, 4.0).unwrap();
        let masks = make_subsample_mask(32, 32, 9, 30.0, 3).unwrap();
        let x = random_image(32, 32, 6);
        let m = forward_measure(&x, &arr, &masks, &NoiseSpec::new(2.0, 4)).unwrap();
        let loss = measurement_loss(&RealImage::zeros(32, 32), &m).unwrap();
        assert!((loss - m.total_energy()).abs() < 1e-12 * m.total_energy());
    }

    #[test]
    fn loss_matches_double_loop_oracle() {
        let n = 16;
        let arr = make_camera_array(n, n, 2, 3.0, 4.0).unwrap();
        let masks = make_subsample_mask(n, n, 4, 50.0, 1).unwrap();
        let truth = random_image(n, n, 10);
        let m = forward_measure(&truth, &arr, &masks, &NoiseSpec::new(1.0, 2)).unwrap();
        let x_est = random_image(n, n, 11);

        // Independent double-loop re-implementation on the DFT oracle.
        let spectrum = crate::field::fft::oracles::dft2_oracle(&x_est.to_complex());
        let mut expected = 0.0;
        for (l, pupil) in arr.pupils().iter().enumerate() {
            let mut masked = spectrum.clone();
            for (v, &keep) in masked.values_mut().iter_mut().zip(pupil.support()) {
                if keep == 0 {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            let inv = crate::field::fft::oracles::idft2_oracle(&masked);
            for r in 0..n {
                for c in 0..n {
                    if masks.camera(l)[r * n + c] == 1 {
                        let mag = inv.at(r, c).norm();
                        let d = m.camera_y(l).at(r, c) - mag;
                        expected += d * d;
                    }
                }
            }
        }
        let got = measurement_loss(&x_est, &m).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn magnitude_and_mask_commute() {
        let n = 16;
        let x = random_field(n, n, 12);
        let masks = make_subsample_mask(n, n, 1, 35.0, 7).unwrap();
        let mask = masks.camera(0);
        // |M(v)| == M(|v|) pointwise for binary M.
        for (i, v) in x.values().iter().enumerate() {
            let lhs = if mask[i] == 1 { *v } else { Complex64::new(0.0, 0.0) }.norm();
            let rhs = if mask[i] == 1 { v.norm() } else { 0.0 };
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let arr = full_aperture(16);
        let masks = make_subsample_mask(16, 16, 1, 100.0, 0).unwrap();
        let x = random_image(8, 8, 0);
        assert!(forward_measure(&x, &arr, &masks, &NoiseSpec::noiseless()).is_err());
        let good = forward_measure(&random_image(16, 16, 0), &arr, &masks, &NoiseSpec::noiseless())
            .unwrap();
        assert!(measurement_loss(&x, &good).is_err());
    }
}
