//! Unitary, DC-centered 2-D FFTs.
//!
//! Convention fixed across the whole crate: `fft2` scales by `1/sqrt(h*w)`
//! and places the DC bin at `(h/2, w/2)` so pupil geometry reads naturally;
//! `ifft2` is its exact inverse (and, because the map is unitary, also its
//! adjoint). Dimensions are restricted to powers of two.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

fn plan_cache() -> &'static Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = plan_cache().lock().unwrap();
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

pub(crate) fn check_pow2_dims(height: usize, width: usize) -> Result<()> {
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(Error::config(format!(
            "field dimensions must be powers of two, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Transforms rows in place with the cached plan of length `width`.
fn transform_rows(data: &mut [Complex64], width: usize, inverse: bool) {
    let fft = plan(width, inverse);
    for row in data.chunks_exact_mut(width) {
        fft.process(row);
    }
}

fn transpose(src: &[Complex64], height: usize, width: usize, dst: &mut [Complex64]) {
    for r in 0..height {
        for c in 0..width {
            dst[c * height + r] = src[r * width + c];
        }
    }
}

/// Swaps quadrants so index `k` moves to `(k + n/2) mod n` along each axis.
/// For power-of-two sizes the shift is an involution.
fn shift2(values: &mut [Complex64], height: usize, width: usize) {
    let (hh, hw) = (height / 2, width / 2);
    if hw > 0 {
        for row in values.chunks_exact_mut(width) {
            let (a, b) = row.split_at_mut(hw);
            a.swap_with_slice(b);
        }
    }
    if hh > 0 {
        let (top, bottom) = values.split_at_mut(hh * width);
        top.swap_with_slice(bottom);
    }
}

/// Unitary DC-centered transform on a raw buffer; no validation.
/// Shared by [`fft2`]/[`ifft2`] and the autodiff FFT layers.
pub(crate) fn fft2_raw(mut data: Vec<Complex64>, h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    debug_assert_eq!(data.len(), h * w);
    if inverse {
        // Undo the centering first, then run the plain inverse transform.
        shift2(&mut data, h, w);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); h * w];
    transform_rows(&mut data, w, inverse);
    transpose(&data, h, w, &mut scratch);
    transform_rows(&mut scratch, h, inverse);
    transpose(&scratch, w, h, &mut data);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut data {
        *v *= scale;
    }
    if !inverse {
        shift2(&mut data, h, w);
    }
    data
}

fn fft2_impl(field: &ComplexField, inverse: bool) -> ComplexField {
    let (h, w) = (field.height(), field.width());
    let data = fft2_raw(field.values().to_vec(), h, w, inverse);
    ComplexField::new(h, w, data).expect("transform of a finite field is finite")
}

/// Unitary DC-centered 2-D Fourier transform.
pub fn fft2(field: &ComplexField) -> Result<ComplexField> {
    check_pow2_dims(field.height(), field.width())?;
    Ok(fft2_impl(field, false))
}

/// Exact inverse of [`fft2`].
pub fn ifft2(field: &ComplexField) -> Result<ComplexField> {
    check_pow2_dims(field.height(), field.width())?;
    Ok(fft2_impl(field, true))
}

/// Sum with pairwise splitting: deterministic and more accurate than a
/// sequential fold for long inputs.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
