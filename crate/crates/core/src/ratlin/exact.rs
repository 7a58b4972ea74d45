//! Exact Gaussian elimination over the rationals: rank, kernel bases,
//! inverses and orthogonal projectors. Used for kernel detection in the
//! singular-value checker and for the structured perturbation providers,
//! where floating point would blur exactly the directions that matter.

use num::{One, Zero};

use super::{LinAlgError, Matrix, Vector};
use crate::{Rat, RatMatrix, RatVector};

/// Reduced row echelon form; returns (rref, pivot columns).
fn rref(m: &RatMatrix) -> (RatMatrix, Vec<usize>) {
    let mut a = m.clone();
    let (rows, cols) = (a.rows(), a.cols());
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let Some(p) = (row..rows).find(|&i| !a.get(i, col).is_zero()) else {
            continue;
        };
        if p != row {
            for j in 0..cols {
                let tmp = a.get(row, j).clone();
                a.set(row, j, a.get(p, j).clone());
                a.set(p, j, tmp);
            }
        }
        let inv = Rat::one() / a.get(row, col).clone();
        for j in 0..cols {
            let v = a.get(row, j).clone() * inv.clone();
            a.set(row, j, v);
        }
        for i in 0..rows {
            if i == row || a.get(i, col).is_zero() {
                continue;
            }
            let factor = a.get(i, col).clone();
            for j in 0..cols {
                let v = a.get(i, j).clone() - factor.clone() * a.get(row, j).clone();
                a.set(i, j, v);
            }
        }
        pivots.push(col);
        row += 1;
    }
    (a, pivots)
}

pub fn rank(m: &RatMatrix) -> usize {
    rref(m).1.len()
}

/// Basis of the right kernel {x : Mx = 0}. Empty when the kernel is trivial.
pub fn kernel_basis(m: &RatMatrix) -> Vec<RatVector> {
    let (r, pivots) = rref(m);
    let cols = m.cols();
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&fc| {
            let mut v = Vector::zeros(cols);
            v.set(fc, Rat::one());
            for (prow, &pcol) in pivots.iter().enumerate() {
                v.set(pcol, -r.get(prow, fc).clone());
            }
            v
        })
        .collect()
}

/// Exact inverse of a square nonsingular matrix via Gauss-Jordan.
pub fn inverse(m: &RatMatrix) -> Result<RatMatrix, LinAlgError> {
    if !m.is_square() {
        return Err(LinAlgError::DimMismatch(format!("inverse of {}x{}", m.rows(), m.cols())));
    }
    let n = m.rows();
    let aug = Matrix::from_fn(n, 2 * n, |i, j| {
        if j < n {
            m.get(i, j).clone()
        } else if j - n == i {
            Rat::one()
        } else {
            Rat::zero()
        }
    });
    let (r, pivots) = rref(&aug);
    if pivots.len() < n || pivots.iter().any(|&p| p >= n) {
        return Err(LinAlgError::Singular);
    }
    Ok(Matrix::from_fn(n, n, |i, j| r.get(i, n + j).clone()))
}

/// Orthogonal projector onto the orthogonal complement of span(basis),
/// computed exactly as I - K (K^T K)^{-1} K^T.
pub fn projector_onto_complement(basis: &[RatVector], dim: usize) -> RatMatrix {
    if basis.is_empty() {
        return Matrix::identity(dim);
    }
    let k = Matrix::from_fn(dim, basis.len(), |i, j| basis[j].get(i).clone());
    let kt = k.transpose();
    let gram = kt.mat_mul(&k).expect("shapes agree");
    let gram_inv = inverse(&gram).expect("basis vectors are independent");
    let proj = k
        .mat_mul(&gram_inv)
        .and_then(|p| p.mat_mul(&kt))
        .expect("shapes agree");
    Matrix::identity(dim).sub(&proj).expect("square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratlin::{rat, rat_int};

    #[test]
    fn rank_and_kernel_of_singular_matrix() {
        // Rows are multiples of each other.
        let m = Matrix::new(
            2,
            2,
            vec![rat_int(1), rat_int(2), rat_int(2), rat_int(4)],
        )
        .unwrap();
        assert_eq!(rank(&m), 1);
        let ker = kernel_basis(&m);
        assert_eq!(ker.len(), 1);
        let img = m.mat_vec(&ker[0]).unwrap();
        assert!(img.is_zero());
    }

    #[test]
    fn kernel_of_identity_is_trivial() {
        let i3: RatMatrix = Matrix::identity(3);
        assert_eq!(rank(&i3), 3);
        assert!(kernel_basis(&i3).is_empty());
    }

    #[test]
    fn inverse_round_trip() {
        let m = Matrix::new(
            3,
            3,
            vec![
                rat_int(2),
                rat_int(1),
                rat_int(0),
                rat(1, 2),
                rat_int(1),
                rat_int(1),
                rat_int(0),
                rat_int(0),
                rat_int(3),
            ],
        )
        .unwrap();
        let inv = inverse(&m).unwrap();
        assert_eq!(m.mat_mul(&inv).unwrap(), Matrix::identity(3));
        let singular =
            Matrix::new(2, 2, vec![rat_int(1), rat_int(1), rat_int(1), rat_int(1)]).unwrap();
        assert_eq!(inverse(&singular), Err(LinAlgError::Singular));
    }

    #[test]
    fn complement_projector_kills_the_span() {
        let ones = Vector::new(vec![rat_int(1), rat_int(1), rat_int(1)]).unwrap();
        let p = projector_onto_complement(std::slice::from_ref(&ones), 3);
        assert!(p.mat_vec(&ones).unwrap().is_zero());
        // Idempotent.
        assert_eq!(p.mat_mul(&p).unwrap(), p);
        // Fixes a vector orthogonal to the span.
        let v = Vector::new(vec![rat_int(1), rat_int(-1), rat_int(0)]).unwrap();
        assert_eq!(p.mat_vec(&v).unwrap(), v);
    }
}
