//! Circular pupil masks and the camera-array geometry.
//!
//! Pupils live in the DC-centered Fourier plane (see [`crate::field::fft`]).
//! A pupil's support is the rasterized disk: pixel `p` is inside iff
//! `|p - center|^2 <= radius^2`, ties included.

use crate::error::{Error, Result};
use crate::field::fft::check_pow2_dims;

/// Binary circular aperture acting as a bandpass filter for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilMask {
    height: usize,
    width: usize,
    center: (f64, f64),
    radius: f64,
    support: Vec<u8>,
}

impl PupilMask {
    /// Rasterizes the disk of `radius` pixels around `center = (row, col)`.
    pub fn new(height: usize, width: usize, center: (f64, f64), radius: f64) -> Result<Self> {
        if radius < 1.0 {
            return Err(Error::config(format!("pupil radius must be >= 1, got {radius}")));
        }
        let r2 = radius * radius;
        let mut support = vec![0u8; height * width];
        let mut count = 0usize;
        for r in 0..height {
            for c in 0..width {
                let dr = r as f64 - center.0;
                let dc = c as f64 - center.1;
                if dr * dr + dc * dc <= r2 {
                    support[r * width + c] = 1;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::config("pupil support is empty"));
        }
        Ok(Self { height, width, center, radius, support })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Binary indicator, row-major, 1 inside the disk.
    pub fn support(&self) -> &[u8] {
        &self.support
    }

    pub fn support_count(&self) -> usize {
        self.support.iter().map(|&b| b as usize).sum()
    }

    pub fn is_inside(&self, row: usize, col: usize) -> bool {
        self.support[row * self.width + col] == 1
    }
}

/// A `g x g` grid of pupil masks centered on the Fourier plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraArray {
    grid_size: usize,
    radius: f64,
    spacing: f64,
    height: usize,
    width: usize,
    pupils: Vec<PupilMask>,
}

impl CameraArray {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Total number of cameras, `grid_size^2`.
    pub fn num_cameras(&self) -> usize {
        self.pupils.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pupils in fixed camera order (row-major over the grid).
    pub fn pupils(&self) -> &[PupilMask] {
        &self.pupils
    }
}

/// Default pupil radius for an `n x n` image: `n / 8`.
pub fn default_radius(n: usize) -> f64 {
    (n as f64 / 8.0).max(1.0)
}

/// Default spacing: adjacent pupils overlap by roughly 60% of their area,
/// which puts the centers `~0.64 r` apart.
pub fn default_spacing(radius: f64) -> f64 {
    (radius * 0.64).round().max(1.0)
}

/// Builds the `grid_size^2` circular pupils on a centered square grid.
///
/// Camera order is row-major over the grid and is part of the contract:
/// solvers and serialized measurement sets index cameras the same way.
pub fn make_camera_array(
    height: usize,
    width: usize,
    grid_size: usize,
    radius: f64,
    spacing: f64,
) -> Result<CameraArray> {
    check_pow2_dims(height, width)?;
    if grid_size == 0 {
        return Err(Error::config("grid_size must be >= 1"));
    }
    if radius < 1.0 {
        return Err(Error::config("radius must be >= 1"));
    }
    if spacing < 0.0 || (grid_size > 1 && spacing < 1.0) {
        return Err(Error::config("spacing must be >= 1 for multi-camera grids"));
    }
    let plane_center = ((height / 2) as f64, (width / 2) as f64);
    let mut pupils = Vec::with_capacity(grid_size * grid_size);
    for gr in 0..grid_size {
        for gc in 0..grid_size {
            let center = (
                plane_center.0 + (gr as f64 - (grid_size as f64 - 1.0) / 2.0) * spacing,
                plane_center.1 + (gc as f64 - (grid_size as f64 - 1.0) / 2.0) * spacing,
            );
            // A pupil must not be clipped by the plane boundary: either the
            // disk fits entirely inside, or it covers the whole plane (the
            // full-aperture limit, where apply_A degenerates to identity).
            let inside = center.0 - radius >= 0.0
                && center.0 + radius <= height as f64 - 1.0
                && center.1 - radius >= 0.0
                && center.1 + radius <= width as f64 - 1.0;
            let max_corner_dist2 = [
                (0.0, 0.0),
                (0.0, width as f64 - 1.0),
                (height as f64 - 1.0, 0.0),
                (height as f64 - 1.0, width as f64 - 1.0),
            ]
            .iter()
            .map(|(r, c)| (r - center.0).powi(2) + (c - center.1).powi(2))
            .fold(0.0, f64::max);
            let covers_plane = max_corner_dist2 <= radius * radius;
            if !inside && !covers_plane {
                return Err(Error::config(format!(
                    "pupil at ({:.1}, {:.1}) with radius {radius} is clipped by the \
                     {height}x{width} Fourier plane",
                    center.0, center.1
                )));
            }
            pupils.push(PupilMask::new(height, width, center, radius)?);
        }
    }
    Ok(CameraArray { grid_size, radius, spacing, height, width, pupils })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_full_aperture_covers_plane() {
        // radius >= half-diagonal of a 64x64 plane.
        let r = (2.0f64).sqrt() * 32.0 + 1.0;
        let pupil = PupilMask::new(64, 64, (32.0, 32.0), r).unwrap();
        assert_eq!(pupil.support_count(), 64 * 64);
    }

    #[test]
    fn grid_five_gives_twenty_five_pupils() {
        let arr = make_camera_array(256, 256, 5, 32.0, 20.0).unwrap();
        assert_eq!(arr.num_cameras(), 25);
        assert_eq!(arr.grid_size(), 5);
    }

    #[test]
    fn support_is_exactly_the_rasterized_disk() {
        let pupil = PupilMask::new(64, 64, (32.0, 32.0), 10.0).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let d2 = (r as f64 - 32.0).powi(2) + (c as f64 - 32.0).powi(2);
                assert_eq!(pupil.is_inside(r, c), d2 <= 100.0, "pixel ({r},{c})");
            }
        }
    }

    #[test]
    fn adjacent_overlap_matches_lens_area() {
        // g=3, radius=10, spacing=12 on 64x64. The analytic circle-circle
        // intersection area with d=12, r=10 is
        //   2 r^2 acos(d / 2r) - (d/2) sqrt(4 r^2 - d^2) = 89.4589...
        // The rasterized overlap (ties included) counts slightly more.
        let arr = make_camera_array(64, 64, 3, 10.0, 12.0).unwrap();
        let (a, b) = (&arr.pupils()[0], &arr.pupils()[1]);
        let overlap = a
            .support()
            .iter()
            .zip(b.support())
            .filter(|(x, y)| **x == 1 && **y == 1)
            .count();
        let d: f64 = 12.0;
        let r: f64 = 10.0;
        let analytic = 2.0 * r * r * (d / (2.0 * r)).acos()
            - (d / 2.0) * (4.0 * r * r - d * d).sqrt();
        assert!((analytic - 89.4590436).abs() < 1e-6);
        assert!(
            (overlap as f64 - analytic).abs() <= 5.0,
            "pixel count {overlap} vs analytic {analytic}"
        );
    }

    #[test]
    fn union_covers_low_frequency_disk() {
        for (n, g) in [(64usize, 3usize), (128, 5)] {
            let radius = default_radius(n);
            let spacing = default_spacing(radius);
            let arr = make_camera_array(n, n, g, radius, spacing).unwrap();
            let covered_radius = spacing * (g as f64 - 1.0) / 2.0 + radius;
            let center = ((n / 2) as f64, (n / 2) as f64);
            for r in 0..n {
                for c in 0..n {
                    let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
                    if d2 <= covered_radius * covered_radius {
                        assert!(
                            arr.pupils().iter().any(|p| p.is_inside(r, c)),
                            "uncovered pixel ({r},{c}) for n={n}, g={g}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_plane_pupils() {
        // Outermost center at 32 +/- 30 with radius 8 exceeds the 64-wide plane.
        let err = make_camera_array(64, 64, 3, 8.0, 30.0);
        assert!(matches!(err, Err(crate::Error::Config(_))));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = make_camera_array(64, 64, 3, 8.0, 5.0).unwrap();
        let b = make_camera_array(64, 64, 3, 8.0, 5.0).unwrap();
        assert_eq!(a, b);
    }
}
