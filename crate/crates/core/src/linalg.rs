//! Small dense linear algebra helpers (matrices of size at most 6).

use nalgebra::DMatrix;

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
///
/// Only the upper triangle is read; the result is sorted ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Spectral (operator 2-) norm via the top eigenvalue of `MᵀM`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let mtm = m.transpose() * m;
    symmetric_eigenvalues(&mtm).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Largest eigenvalue of the symmetrization `(M + Mᵀ)/2`.
pub fn top_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    *symmetric_eigenvalues(&s).last().unwrap()
}

/// Inverse of a small square matrix; panics on singular input.
pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("singular matrix")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let ev = symmetric_eigenvalues(&m);
        let s2 = 2f64.sqrt();
        let exact = [2.0 - s2, 2.0, 2.0 + s2];
        for (a, b) in ev.iter().zip(exact) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (s, c) = 0.3f64.sin_cos();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((spectral_norm(&m) - 1.0).abs() < 1e-14);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((spectral_norm(&d) - 5.0).abs() < 1e-13);
    }
}
