//! Finite-difference oracles for gradient verification.
//!
//! These helpers are test infrastructure exposed publicly so the
//! acceptance suite can re-run the same checks end to end. They know
//! nothing about tapes: callers wrap graph construction in a closure.

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Jacobian of `f: R^n -> R^m`, one column per input coordinate.
/// Returned row-major as `m x n`.
pub fn finite_diff_jacobian(
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let n = x.len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut probe = x.to_vec();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + h;
        let fp = f(&probe);
        probe[j] = orig - h;
        let fm = f(&probe);
        probe[j] = orig;
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// `log |det J|` of a square Jacobian via LU with partial pivoting.
/// Brute-force oracle for the flow's log-determinant accounting.
pub fn logdet_abs(jacobian: &[Vec<f64>]) -> f64 {
    let n = jacobian.len();
    let mut a: Vec<Vec<f64>> = jacobian.to_vec();
    for row in &a {
        assert_eq!(row.len(), n, "jacobian must be square");
    }
    let mut logdet = 0.0;
    for k in 0..n {
        let (mut pivot_row, mut pivot_val) = (k, a[k][k].abs());
        for r in k + 1..n {
            if a[r][k].abs() > pivot_val {
                pivot_row = r;
                pivot_val = a[r][k].abs();
            }
        }
        assert!(pivot_val > 0.0, "singular jacobian");
        a.swap(k, pivot_row);
        logdet += a[k][k].abs().ln();
        for r in k + 1..n {
            let factor = a[r][k] / a[k][k];
            for c in k..n {
                a[r][c] -= factor * a[k][c];
            }
        }
    }
    logdet
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_matches_analytic_quadratic() {
        // f(x) = sum(x^2): grad = 2x.
        let x = [0.3, -1.2, 2.0];
        let g = finite_diff_grad(|v| v.iter().map(|a| a * a).sum(), &x, 1e-6);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn logdet_of_diagonal_matrix() {
        let jac = vec![vec![2.0, 0.0], vec![0.0, -3.0]];
        assert!((logdet_abs(&jac) - (6.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn logdet_of_rotation_is_zero() {
        let (c, s) = (0.6, 0.8);
        let jac = vec![vec![c, -s], vec![s, c]];
        assert!(logdet_abs(&jac).abs() < 1e-12);
    }
}
