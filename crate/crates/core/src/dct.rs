//! Orthonormal 2-D DCT-II, used by the sparsity-projection baseline.
//!
//! Transforms are applied separably with precomputed cosine matrices:
//! `Y = D X D^T`, `X = D^T Y D`, where `D[0][j] = sqrt(1/n)` and
//! `D[i][j] = sqrt(2/n) cos(pi (2j+1) i / (2n))` for `i > 0`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

fn matrix_cache() -> &'static Mutex<HashMap<usize, std::sync::Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, std::sync::Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn dct_matrix(n: usize) -> std::sync::Arc<Vec<f64>> {
    let mut cache = matrix_cache().lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                let scale = if i == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                for j in 0..n {
                    d[i * n + j] = scale
                        * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * i as f64
                            / (2.0 * n as f64))
                            .cos();
                }
            }
            std::sync::Arc::new(d)
        })
        .clone()
}

/// `out = a * b` for row-major square matrices of side `n`.
fn matmul_square(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

fn transpose_square(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Forward orthonormal 2-D DCT-II of a square row-major array.
pub fn dct2(values: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(values.len(), n * n);
    let d = dct_matrix(n);
    let dt = transpose_square(&d, n);
    let mut tmp = vec![0.0; n * n];
    let mut out = vec![0.0; n * n];
    matmul_square(&d, values, n, &mut tmp);
    matmul_square(&tmp, &dt, n, &mut out);
    out
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(coeffs.len(), n * n);
    let d = dct_matrix(n);
    let dt = transpose_square(&d, n);
    let mut tmp = vec![0.0; n * n];
    let mut out = vec![0.0; n * n];
    matmul_square(&dt, coeffs, n, &mut tmp);
    matmul_square(&tmp, &d, n, &mut out);
    out
}

/// The (p, q) orthonormal 2-D DCT basis function as an image array.
pub fn basis_function(n: usize, p: usize, q: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; n * n];
    coeffs[p * n + q] = 1.0;
    idct2(&coeffs, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn roundtrip_is_tight() {
        let n = 16;
        let mut rng = crate::rng::seeded_rng(1);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let back = idct2(&dct2(&x, n), n);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_energy_preserved() {
        let n = 8;
        let mut rng = crate::rng::seeded_rng(2);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let c = dct2(&x, n);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        assert!((ex - ec).abs() < 1e-12 * ex);
    }

    #[test]
    fn dc_basis_is_constant() {
        let n = 8;
        let b = basis_function(n, 0, 0);
        for v in &b {
            assert!((v - 1.0 / n as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_direct_summation_oracle() {
        // Direct O(n^4) definition of the orthonormal DCT-II.
        let n = 8;
        let mut rng = crate::rng::seeded_rng(3);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let fast = dct2(&x, n);
        for p in 0..n {
            for q in 0..n {
                let ap = if p == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                let aq = if q == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                let mut acc = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        acc += x[r * n + c]
                            * (std::f64::consts::PI * (2.0 * r as f64 + 1.0) * p as f64
                                / (2.0 * n as f64))
                                .cos()
                            * (std::f64::consts::PI * (2.0 * c as f64 + 1.0) * q as f64
                                / (2.0 * n as f64))
                                .cos();
                    }
                }
                let expected = ap * aq * acc;
                assert!((fast[p * n + q] - expected).abs() < 1e-11);
            }
        }
    }
}
