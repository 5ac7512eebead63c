//! Classical baselines: alternating-projection error reduction (IERA) and
//! a DCT-sparsity variant.
//!
//! IERA keeps a high-resolution Fourier estimate and alternates two
//! constraint families each epoch. First the camera sweep: for each camera
//! `l` in fixed order, transform the pupil's patch to the spatial domain,
//! replace magnitudes with the measured values at retained pixels (keeping
//! the current phase; phase 0 where the magnitude is exactly zero), leave
//! discarded pixels unchanged, and write the patch back (cameras later in
//! the order overwrite earlier ones inside overlaps). Then the object
//! constraint: the estimate is projected back to a real image, the
//! magnitude of its spatial field, and re-embedded. Without that second
//! projection the spatial field slowly accumulates phase and the residual
//! of the real-image estimate drifts upward after converging.
//!
//! The sparsity variant inserts one more projection per epoch: keep the
//! `s` largest DCT coefficients of the real-image estimate.

use crate::dct::{dct2, idct2};
use crate::error::{Error, Result};
use crate::field::{fft2, ifft2, ComplexField, RealImage};
use crate::measurement::{measurement_loss, MeasurementSet};
use crate::rng::seeded_rng;
use num_complex::Complex64;
use rand::Rng;

/// How the Fourier estimate is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum IeraInit {
    /// Constant image whose value is the mean of all retained measurements.
    FlatMagnitude,
    /// Uniform random image from the given seed.
    Random { seed: u64 },
    /// Start from a known image (diagnostics; used by the fixed-point test).
    FromImage(RealImage),
}

/// Configuration for [`iera_reconstruct`].
#[derive(Debug, Clone, PartialEq)]
pub struct IeraConfig {
    pub epochs: usize,
    pub init: IeraInit,
    /// Record the measurement loss of the running estimate each epoch.
    pub track_residual: bool,
}

impl Default for IeraConfig {
    fn default() -> Self {
        Self { epochs: 100, init: IeraInit::FlatMagnitude, track_residual: true }
    }
}

impl IeraConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Configuration for [`sparse_reconstruct`]: IERA plus a per-epoch
/// projection onto the `sparsity_s` largest DCT coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConfig {
    pub iera: IeraConfig,
    pub sparsity_s: usize,
}

impl SparseConfig {
    fn validate(&self, n: usize) -> Result<()> {
        self.iera.validate()?;
        if self.sparsity_s == 0 || self.sparsity_s > n {
            return Err(Error::config(format!(
                "sparsity_s must be in 1..={n}, got {}",
                self.sparsity_s
            )));
        }
        Ok(())
    }
}

fn initial_image(m: &MeasurementSet, init: &IeraInit) -> Result<RealImage> {
    let (h, w) = (m.height(), m.width());
    match init {
        IeraInit::FlatMagnitude => {
            let mut total = 0.0;
            let mut count = 0usize;
            for l in 0..m.num_cameras() {
                let mask = m.masks().camera(l);
                for (v, &keep) in m.camera_y(l).values().iter().zip(mask) {
                    if keep == 1 {
                        total += v;
                        count += 1;
                    }
                }
            }
            let mean = if count > 0 { total / count as f64 } else { 0.0 };
            Ok(RealImage::constant(h, w, mean))
        }
        IeraInit::Random { seed } => {
            let mut rng = seeded_rng(*seed);
            RealImage::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect())
        }
        IeraInit::FromImage(img) => {
            if img.height() != h || img.width() != w {
                return Err(Error::dims("init image dims do not match measurements"));
            }
            Ok(img.clone())
        }
    }
}

/// One full camera sweep of magnitude replacement on the Fourier estimate.
fn sweep(spectrum: &mut ComplexField, m: &MeasurementSet) -> Result<()> {
    for (l, pupil) in m.array().pupils().iter().enumerate() {
        let mut patch = spectrum.clone();
        for (v, &keep) in patch.values_mut().iter_mut().zip(pupil.support()) {
            if keep == 0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        let mut a = ifft2(&patch)?;
        let y = m.camera_y(l);
        let mask = m.masks().camera(l);
        for (i, v) in a.values_mut().iter_mut().enumerate() {
            if mask[i] == 1 {
                let mag = v.norm();
                *v = if mag == 0.0 {
                    // Phase 0 at exact zeros.
                    Complex64::new(y.values()[i], 0.0)
                } else {
                    *v * (y.values()[i] / mag)
                };
            }
        }
        let updated = fft2(&a)?;
        for (i, (v, &keep)) in spectrum
            .values_mut()
            .iter_mut()
            .zip(pupil.support())
            .enumerate()
        {
            if keep == 1 {
                *v = updated.values()[i];
            }
        }
    }
    Ok(())
}

/// Hard-thresholds a real image onto its `s` largest DCT atoms (identity
/// when `s` covers every coefficient, so the sparse solver degenerates to
/// plain IERA bit-for-bit).
fn sparsity_project(image: &mut RealImage, s: usize) {
    let n = image.height();
    debug_assert_eq!(image.width(), n, "sparse baseline assumes square images");
    let total = n * n;
    if s >= total {
        return;
    }
    let coeffs = dct2(image.values(), n);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        coeffs[b]
            .abs()
            .partial_cmp(&coeffs[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = vec![0.0; total];
    for &idx in order.iter().take(s) {
        kept[idx] = coeffs[idx];
    }
    let back = idct2(&kept, n);
    image.values_mut().copy_from_slice(&back);
}

/// Shared epoch loop. `sparsity` of `None` runs plain IERA.
fn run_error_reduction(
    m: &MeasurementSet,
    cfg: &IeraConfig,
    sparsity: Option<usize>,
) -> Result<(RealImage, Vec<f64>)> {
    let mut image = initial_image(m, &cfg.init)?;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    if cfg.track_residual {
        trace.push(measurement_loss(&image, m)?);
    }
    let mut spectrum = fft2(&image.to_complex())?;
    for _ in 0..cfg.epochs {
        sweep(&mut spectrum, m)?;
        // Object-domain projection: the estimate is a real image.
        image = ifft2(&spectrum)?.magnitude();
        if let Some(s) = sparsity {
            sparsity_project(&mut image, s);
        }
        spectrum = fft2(&image.to_complex())?;
        if cfg.track_residual {
            trace.push(measurement_loss(&image, m)?);
        }
    }
    Ok((image.clamped(), trace))
}

/// Runs IERA and returns the reconstruction plus the residual trace.
///
/// The trace holds `epochs + 1` entries: the loss of the initial estimate,
/// then the loss of the estimate after each epoch. The returned image is
/// clamped to `[0, 1]`.
pub fn iera_reconstruct(m: &MeasurementSet, cfg: &IeraConfig) -> Result<(RealImage, Vec<f64>)> {
    cfg.validate()?;
    run_error_reduction(m, cfg, None)
}

/// IERA with a DCT hard-thresholding projection after each sweep.
pub fn sparse_reconstruct(
    m: &MeasurementSet,
    cfg: &SparseConfig,
) -> Result<(RealImage, Vec<f64>)> {
    if m.height() != m.width() {
        return Err(Error::config("sparse baseline requires square images"));
    }
    cfg.validate(m.height() * m.width())?;
    run_error_reduction(m, &cfg.iera, Some(cfg.sparsity_s))
}

/// Writes a residual trace as `epoch,loss` CSV text.
pub fn trace_to_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{v:.17e}\n"));
    }
    out
}
