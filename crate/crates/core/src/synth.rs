//! Synthetic test images.
//!
//! Standard test images (Cameraman, Lena, ...) are not redistributed with
//! the crate; these generators provide a self-contained fallback set for
//! tests and benchmarks, plus the blob datasets used to train the toy flow.

use crate::field::RealImage;
use crate::rng::{derive_seed, seeded_rng};
use rand::Rng;

/// Sum of `count` Gaussian bumps with random centers, widths and weights.
pub fn gaussian_blobs(height: usize, width: usize, count: usize, seed: u64) -> RealImage {
    let mut rng = seeded_rng(seed);
    let mut bumps = Vec::with_capacity(count);
    for _ in 0..count {
        let cr = rng.random::<f64>() * height as f64;
        let cc = rng.random::<f64>() * width as f64;
        let sigma = (0.06 + 0.14 * rng.random::<f64>()) * height.min(width) as f64;
        let amp = 0.4 + 0.6 * rng.random::<f64>();
        bumps.push((cr, cc, sigma, amp));
    }
    let mut values = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            let mut v = 0.0;
            for &(cr, cc, sigma, amp) in &bumps {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            values[r * width + c] = v;
        }
    }
    let max = values.iter().cloned().fold(1e-12, f64::max);
    for v in &mut values {
        *v /= max;
    }
    RealImage::new(height, width, values).expect("finite by construction")
}

/// Alternating bars; `horizontal` controls the orientation, `period` the
/// stripe width in pixels.
pub fn bars(height: usize, width: usize, period: usize, horizontal: bool) -> RealImage {
    let period = period.max(1);
    let mut values = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            let t = if horizontal { r } else { c };
            values[r * width + c] = if (t / period) % 2 == 0 { 0.9 } else { 0.1 };
        }
    }
    RealImage::new(height, width, values).unwrap()
}

/// Resolution-chart style target: nested bar triplets at shrinking scales
/// plus a filled square, on a mid-gray background.
pub fn chart(height: usize, width: usize) -> RealImage {
    let mut values = vec![0.5; height * width];
    let fill = |r0: usize, c0: usize, h: usize, w: usize, v: f64, values: &mut Vec<f64>| {
        for r in r0..(r0 + h).min(height) {
            for c in c0..(c0 + w).min(width) {
                values[r * width + c] = v;
            }
        }
    };
    // Bar triplets of halving pitch down the left side.
    let mut pitch = (height / 8).max(1);
    let mut row = height / 16;
    while row + 5 * pitch < height {
        for k in 0..3 {
            fill(row + 2 * k * pitch, width / 16, pitch, width / 3, 0.95, &mut values);
        }
        row += 6 * pitch + 2;
        if pitch == 1 {
            break;
        }
        pitch /= 2;
    }
    // Dark and bright squares on the right.
    fill(height / 8, 5 * width / 8, height / 4, width / 4, 0.05, &mut values);
    fill(5 * height / 8, 5 * width / 8, height / 4, width / 4, 0.95, &mut values);
    RealImage::new(height, width, values).unwrap()
}

/// Natural-image-like composite: smooth gradient background, filled
/// ellipses and a rectangle at mixed intensities, lightly blurred.
pub fn scene(height: usize, width: usize, seed: u64) -> RealImage {
    let mut rng = seeded_rng(seed);
    let mut values = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            values[r * width + c] =
                0.25 + 0.3 * r as f64 / height as f64 + 0.15 * c as f64 / width as f64;
        }
    }
    // Three ellipses plus one axis-aligned rectangle.
    for &intensity in &[0.85, 0.1, 0.65] {
        let cr = (0.2 + 0.6 * rng.random::<f64>()) * height as f64;
        let cc = (0.2 + 0.6 * rng.random::<f64>()) * width as f64;
        let ra = (0.08 + 0.12 * rng.random::<f64>()) * height as f64;
        let rb = (0.08 + 0.12 * rng.random::<f64>()) * width as f64;
        for r in 0..height {
            for c in 0..width {
                let d = ((r as f64 - cr) / ra).powi(2) + ((c as f64 - cc) / rb).powi(2);
                if d <= 1.0 {
                    values[r * width + c] = intensity;
                }
            }
        }
    }
    let r0 = (0.55 * height as f64) as usize;
    let c0 = (0.1 * width as f64) as usize;
    for r in r0..(r0 + height / 5).min(height) {
        for c in c0..(c0 + width / 4).min(width) {
            values[r * width + c] = 0.45;
        }
    }
    // Two passes of a 3x3 binomial blur soften the edges.
    for _ in 0..2 {
        let src = values.clone();
        for r in 0..height {
            for c in 0..width {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0 && rr < height as i64 && cc >= 0 && cc < width as i64 {
                            let wgt = (2 - dr.abs()) as f64 * (2 - dc.abs()) as f64;
                            acc += wgt * src[rr as usize * width + cc as usize];
                            norm += wgt;
                        }
                    }
                }
                values[r * width + c] = acc / norm;
            }
        }
    }
    RealImage::new(height, width, values).expect("finite by construction")
}

/// The five-image fallback set standing in for the paper's natural images.
pub fn fallback_set(size: usize) -> Vec<(String, RealImage)> {
    vec![
        ("blobs_a".into(), gaussian_blobs(size, size, 6, 101)),
        ("blobs_b".into(), gaussian_blobs(size, size, 10, 202)),
        ("scene_a".into(), scene(size, size, 303)),
        ("scene_b".into(), scene(size, size, 404)),
        ("chart".into(), chart(size, size)),
    ]
}

/// Dataset of single-class blob images for flow training; item `i` uses the
/// sub-seed `derive_seed(seed, i)`.
pub fn blob_dataset(size: usize, count: usize, seed: u64) -> Vec<RealImage> {
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let n_blobs = 1 + (s % 2) as usize;
            gaussian_blobs(size, size, n_blobs, derive_seed(s, 7))
        })
        .collect()
}
