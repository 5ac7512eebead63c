//! Complex 2-D fields, unitary FFTs, pupil/camera geometry, subsampling
//! masks and the noise model.

pub mod fft;
pub mod io;
pub mod noise;
pub mod pupil;
pub mod sampling;

pub use fft::{fft2, ifft2};
pub use noise::{add_noise, NoiseSpec};
pub use pupil::{make_camera_array, CameraArray, PupilMask};
pub use sampling::{make_subsample_mask, SubsampleMask};

use crate::error::{Error, Result};
use num_complex::Complex64;

/// A real-valued grayscale image, row-major, nominal range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RealImage {
    /// Builds an image from row-major values. All values must be finite.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config("image dimensions must be >= 1"));
        }
        if values.len() != height * width {
            return Err(Error::dims(format!(
                "expected {}x{} = {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image contains NaN or Inf".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn same_dims(&self, other: &RealImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Clamps every pixel into `[0, 1]`.
    pub fn clamped(mut self) -> Self {
        for v in &mut self.values {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Mean pixel value.
    pub fn mean(&self) -> f64 {
        crate::field::fft::pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// Promotes to a complex field with zero imaginary part.
    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// A 2-D array of complex amplitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config("field dimensions must be >= 1"));
        }
        if values.len() != height * width {
            return Err(Error::dims(format!(
                "expected {}x{} = {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("field contains NaN or Inf".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn same_dims(&self, other: &ComplexField) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Per-pixel magnitude as a real image.
    pub fn magnitude(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    /// L2 norm of the field seen as a complex vector.
    pub fn norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        crate::field::fft::pairwise_sum(&sq).sqrt()
    }
}
