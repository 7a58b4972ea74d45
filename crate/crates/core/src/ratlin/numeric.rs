//! Floating-point spectral kernels: a cyclic Jacobi eigensolver for small
//! symmetric matrices, a 2-norm estimate built on it, and a semidefiniteness
//! probe via Cholesky with a pivot tolerance. These are the only places in
//! the crate where rounding happens.

use super::{to_f64_matrix, LinAlgError, Matrix};
use crate::RatMatrix;

const MAX_SWEEPS: usize = 128;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order together with the matching
/// eigenvector columns. Convergence criterion: the off-diagonal Frobenius
/// norm drops below `tol` times the matrix scale.
#[allow(clippy::needless_range_loop)]
pub fn sym_eigen(m: &Matrix<f64>, tol: f64) -> Result<(Vec<f64>, Matrix<f64>), LinAlgError> {
    if tol <= 0.0 {
        return Err(LinAlgError::BadTolerance);
    }
    assert!(m.is_square(), "eigensolve needs a square matrix");
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();

    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let threshold = (tol.min(1e-12) * scale).max(f64::MIN_POSITIVE);

    let off = |a: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= threshold / (n as f64) {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) > threshold {
        return Err(LinAlgError::NonConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let eigvecs = Matrix::from_fn(n, n, |i, j| v[i][order[j]]);
    Ok((eigvals, eigvecs))
}

/// Largest singular value of a floating-point matrix via an eigensolve on
/// the Gram matrix.
pub fn two_norm_f64(m: &Matrix<f64>, tol: f64) -> Result<f64, LinAlgError> {
    // Work on the smaller Gram matrix of the two.
    let gram = if m.rows() <= m.cols() {
        m.mat_mul(&m.transpose()).expect("shapes agree")
    } else {
        m.transpose().mat_mul(m).expect("shapes agree")
    };
    let (eigs, _) = sym_eigen(&gram, tol)?;
    let top = eigs.last().copied().unwrap_or(0.0).max(0.0);
    Ok(top.sqrt())
}

/// Largest singular value of an exact matrix, computed numerically.
pub fn two_norm_num(m: &RatMatrix, tol: f64) -> Result<f64, LinAlgError> {
    if tol <= 0.0 {
        return Err(LinAlgError::BadTolerance);
    }
    two_norm_f64(&to_f64_matrix(m), tol)
}

/// Cholesky-style probe for positive semidefiniteness.
///
/// Returns the most negative pivot encountered (0.0 when all pivots are
/// nonnegative up to the tolerance); the matrix passes as PSD when the
/// result is `>= -pivot_tol * scale`.
#[allow(clippy::needless_range_loop)]
pub fn psd_min_eig_probe(m: &Matrix<f64>, pivot_tol: f64) -> bool {
    assert!(m.is_square());
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(1.0f64, f64::max);
    let floor = -pivot_tol * scale;
    for k in 0..n {
        let pivot = a[k][k];
        if pivot < floor {
            return false;
        }
        if pivot <= 0.0 {
            // Semidefinite pivot: the rest of the row must vanish too.
            let row_ok = (k + 1..n).all(|j| a[k][j].abs() <= pivot_tol.sqrt() * scale);
            if !row_ok {
                return false;
            }
            continue;
        }
        for i in (k + 1)..n {
            let f = a[i][k] / pivot;
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    true
}
