//! Singular-value approximation certificates for doubly stochastic targets.
//!
//! The mixing gap D(A, y) = ||y||^2 - ||Ay||^2 plays the role the weight
//! measure plays on the PRG side. A candidate is an eps-SV approximation of W
//! when |x^T (cand - W) y| <= eps * (D(W^T, x) + D(W, y)) / 2 for all x, y;
//! the minimal eps is the top singular value of P E Q with P, Q the
//! pseudoinverse square roots of I - W W^T and I - W^T W, provided the error
//! matrix vanishes on their kernels, which we verify in exact rational
//! arithmetic before any floating point enters. A PSD-bisection route on the
//! 2w x 2w block form cross-validates the spectral route.

use num::{One, Signed};
use serde::Serialize;
use thiserror::Error;

use crate::approx::{bs_intervals, level_matrix, BaseProvider, EpsSchedule, LevelKey};
use crate::ratlin::{
    kernel_basis, psd_min_eig_probe, rat_to_f64, sym_eigen, to_f64_matrix, two_norm_f64,
    LinAlgError, Matrix,
};
use crate::robp::RobpError;
use crate::{F64Matrix, Rat, RatMatrix, RatVector};

#[derive(Debug, Error)]
pub enum SvError {
    #[error("target matrix is not doubly stochastic")]
    NotDoublyStochastic,
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("base certification failed at ({l},{r}): measured {measured} > required {required}")]
    BaseCertification { l: usize, r: usize, measured: f64, required: f64 },
    #[error(transparent)]
    Robp(#[from] RobpError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("{0}")]
    Approx(String),
}

impl From<crate::approx::ApproxError> for SvError {
    fn from(e: crate::approx::ApproxError) -> Self {
        SvError::Approx(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SvMethod {
    SpectralPinv,
    PsdBisection,
}

/// Outcome of a singular-value approximation measurement.
#[derive(Debug, Clone, Serialize)]
pub struct SvCertificate {
    pub eps_measured: f64,
    pub method: SvMethod,
    /// True iff the error matrix vanishes exactly on the kernels of
    /// I - W W^T (left) and I - W^T W (right). Without this the minimal
    /// eps is infinite and `eps_measured` is +inf.
    pub kernel_ok: bool,
}

/// Exact mixing gap ||y||^2 - ||Ay||^2.
pub fn mixing_gap(a: &RatMatrix, y: &RatVector) -> Result<Rat, LinAlgError> {
    let ay = a.mat_vec(y)?;
    Ok(y.norm2_sq() - ay.norm2_sq())
}

pub fn is_doubly_stochastic(m: &RatMatrix) -> bool {
    m.is_square()
        && m.row_sums().entries().iter().all(|s| s.is_one())
        && m.col_sums().entries().iter().all(|s| s.is_one())
        && m.entries().iter().all(|e| !e.is_negative())
}

/// Exact kernel bases of I - W W^T and I - W^T W.
fn gram_kernels(w: &RatMatrix) -> Result<(Vec<RatVector>, Vec<RatVector>), LinAlgError> {
    let dim = w.rows();
    let wt = w.transpose();
    let left_gram = Matrix::identity(dim).sub(&w.mat_mul(&wt)?)?;
    let right_gram = Matrix::identity(dim).sub(&wt.mat_mul(w)?)?;
    Ok((kernel_basis(&left_gram), kernel_basis(&right_gram)))
}

fn vanishes_on_kernels(
    err: &RatMatrix,
    left_kernel: &[RatVector],
    right_kernel: &[RatVector],
) -> Result<bool, LinAlgError> {
    let et = err.transpose();
    for x in left_kernel {
        if !et.mat_vec(x)?.is_zero() {
            return Ok(false);
        }
    }
    for y in right_kernel {
        if !err.mat_vec(y)?.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Pseudoinverse square root of an exact PSD Gram matrix. The kernel
/// dimension comes from exact rank computation, so no eigenvalue threshold
/// decides what is singular: the `kernel_dim` smallest eigenvalues are
/// treated as exact zeros and the rest are inverted.
fn pinv_sqrt(gram: &RatMatrix, kernel_dim: usize, tol: f64) -> Result<F64Matrix, LinAlgError> {
    let dim = gram.rows();
    let (vals, vecs) = sym_eigen(&to_f64_matrix(gram), tol)?;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let factors: Vec<f64> = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < kernel_dim {
                0.0
            } else {
                1.0 / v.max(1e-14 * scale).sqrt()
            }
        })
        .collect();
    Ok(F64Matrix::from_fn(dim, dim, |i, j| {
        (0..dim).map(|k| vecs.get(i, k) * factors[k] * vecs.get(j, k)).sum()
    }))
}

/// Minimal SV-approximation parameter of `candidate` against the doubly
/// stochastic `target`, via the spectral pseudoinverse-square-root route.
/// Kernel membership is decided exactly; if the error matrix fails to vanish
/// there, no finite parameter exists and +inf is certified with
/// `kernel_ok = false`.
pub fn sv_error(
    target: &RatMatrix,
    candidate: &RatMatrix,
    tol: f64,
) -> Result<SvCertificate, SvError> {
    if tol <= 0.0 {
        return Err(SvError::BadTolerance);
    }
    if !is_doubly_stochastic(target) {
        return Err(SvError::NotDoublyStochastic);
    }
    let err = candidate.sub(target)?;
    let (left_kernel, right_kernel) = gram_kernels(target)?;
    if !vanishes_on_kernels(&err, &left_kernel, &right_kernel)? {
        return Ok(SvCertificate {
            eps_measured: f64::INFINITY,
            method: SvMethod::SpectralPinv,
            kernel_ok: false,
        });
    }
    if err.is_zero() {
        return Ok(SvCertificate {
            eps_measured: 0.0,
            method: SvMethod::SpectralPinv,
            kernel_ok: true,
        });
    }
    let dim = target.rows();
    let wt = target.transpose();
    let left_gram = Matrix::identity(dim).sub(&target.mat_mul(&wt)?)?;
    let right_gram = Matrix::identity(dim).sub(&wt.mat_mul(target)?)?;
    let p = pinv_sqrt(&left_gram, left_kernel.len(), tol)?;
    let q = pinv_sqrt(&right_gram, right_kernel.len(), tol)?;
    let middle = p.mat_mul(&to_f64_matrix(&err))?.mat_mul(&q)?;
    let eps = two_norm_f64(&middle, tol)?;
    Ok(SvCertificate { eps_measured: eps, method: SvMethod::SpectralPinv, kernel_ok: true })
}

/// Independent route: bisection on the smallest eps making the block matrix
/// [[ (eps/2)(I-WW^T), -E/2 ], [ -E^T/2, (eps/2)(I-W^TW) ]] positive
/// semidefinite, probed by Cholesky with a pivot tolerance.
pub fn sv_error_bisection(
    target: &RatMatrix,
    candidate: &RatMatrix,
    tol: f64,
) -> Result<SvCertificate, SvError> {
    if tol <= 0.0 {
        return Err(SvError::BadTolerance);
    }
    if !is_doubly_stochastic(target) {
        return Err(SvError::NotDoublyStochastic);
    }
    let err = candidate.sub(target)?;
    let (left_kernel, right_kernel) = gram_kernels(target)?;
    if !vanishes_on_kernels(&err, &left_kernel, &right_kernel)? {
        return Ok(SvCertificate {
            eps_measured: f64::INFINITY,
            method: SvMethod::PsdBisection,
            kernel_ok: false,
        });
    }
    if err.is_zero() {
        return Ok(SvCertificate {
            eps_measured: 0.0,
            method: SvMethod::PsdBisection,
            kernel_ok: true,
        });
    }
    let dim = target.rows();
    let wt = target.transpose();
    let a = to_f64_matrix(&Matrix::identity(dim).sub(&target.mat_mul(&wt)?)?);
    let b = to_f64_matrix(&Matrix::identity(dim).sub(&wt.mat_mul(target)?)?);
    let e = to_f64_matrix(&err);
    let block = |eps: f64| -> F64Matrix {
        F64Matrix::from_fn(2 * dim, 2 * dim, |i, j| match (i < dim, j < dim) {
            (true, true) => eps / 2.0 * a.get(i, j),
            (true, false) => -e.get(i, j - dim) / 2.0,
            (false, true) => -e.get(j, i - dim) / 2.0,
            (false, false) => eps / 2.0 * b.get(i - dim, j - dim),
        })
    };
    let is_psd = |eps: f64| psd_min_eig_probe(&block(eps), 1e-12);
    let mut hi = tol.max(1e-9);
    let mut grow = 0;
    while !is_psd(hi) {
        hi *= 2.0;
        grow += 1;
        if grow > 80 {
            return Ok(SvCertificate {
                eps_measured: f64::INFINITY,
                method: SvMethod::PsdBisection,
                kernel_ok: true,
            });
        }
    }
    let mut lo = 0.0f64;
    while hi - lo > tol * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if is_psd(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SvCertificate { eps_measured: hi, method: SvMethod::PsdBisection, kernel_ok: true })
}

/// One row of the norm-contraction check.
#[derive(Debug, Clone, Serialize)]
pub struct SvNormRow {
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Checks ||E y||_2 <= delta * sqrt(D(W, y)) + tol on each test vector,
/// the norm consequence of a delta-SV certificate.
pub fn sv_norm_check(
    target: &RatMatrix,
    candidate: &RatMatrix,
    delta: f64,
    test_set: &[RatVector],
    tol: f64,
) -> Result<Vec<SvNormRow>, SvError> {
    if !is_doubly_stochastic(target) {
        return Err(SvError::NotDoublyStochastic);
    }
    let err = candidate.sub(target)?;
    let mut rows = Vec::new();
    for (index, y) in test_set.iter().enumerate() {
        let lhs = rat_to_f64(&err.mat_vec(y)?.norm2_sq()).sqrt();
        let gap = rat_to_f64(&mixing_gap(target, y)?).max(0.0);
        let rhs = delta * gap.sqrt() + tol;
        rows.push(SvNormRow { index, lhs, rhs, pass: lhs <= rhs });
    }
    Ok(rows)
}

/// One key of the SV propagation report.
#[derive(Debug, Clone, Serialize)]
pub struct SvHarnessRow {
    pub l: usize,
    pub r: usize,
    pub k: u32,
    pub t: u32,
    pub measured: f64,
    pub bound: f64,
    pub method: SvMethod,
    pub kernel_ok: bool,
    pub pass: bool,
}

/// Replays the SV propagation bound: base matrices certified at eps(0)/3
/// must yield level-k matrices within C_t * eps(k) + tol at every scale.
pub fn sv_main_harness(
    provider: &BaseProvider,
    schedule: &EpsSchedule,
    k_max: u32,
    tol: f64,
) -> Result<Vec<SvHarnessRow>, SvError> {
    let program = provider.program().clone();
    let n = program.n();
    let base_budget = rat_to_f64(&(schedule.eps(0) / crate::ratlin::rat_int(3)));
    for (l, r) in bs_intervals(n) {
        let cert = sv_error(&program.rw_matrix(l, r)?, &provider.level0(l, r)?, tol)?;
        if !(cert.kernel_ok && cert.eps_measured <= base_budget + tol) {
            return Err(SvError::BaseCertification {
                l,
                r,
                measured: cert.eps_measured,
                required: base_budget,
            });
        }
    }
    let mut rows = Vec::new();
    for (l, r) in bs_intervals(n) {
        let t = (r - l).trailing_zeros();
        let truth = program.rw_matrix(l, r)?;
        for k in 0..=k_max {
            let lvl = level_matrix(provider, LevelKey::new(l, r, k))?;
            let cert = sv_error(&truth, &lvl, tol)?;
            let bound = rat_to_f64(&(schedule.c_t(t) * schedule.eps(k)));
            let pass = cert.kernel_ok && cert.eps_measured <= bound + tol;
            rows.push(SvHarnessRow {
                l,
                r,
                k,
                t,
                measured: cert.eps_measured,
                bound,
                method: cert.method,
                kernel_ok: cert.kernel_ok,
                pass,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratlin::{rat, rat_int, Vector};
    use num::Zero;
    use crate::robp::gen_regular;
    use rand_core::{RngCore, SeedableRng};

    fn uniform2() -> RatMatrix {
        Matrix::from_fn(2, 2, |_, _| rat(1, 2))
    }

    fn tilted2(c: (i64, i64)) -> RatMatrix {
        let c = rat(c.0, c.1);
        uniform2()
            .add(&Matrix::new(2, 2, vec![c.clone(), -c.clone(), -c.clone(), c]).unwrap())
            .unwrap()
    }

    #[test]
    fn mixing_gap_cases() {
        let y = Vector::new(vec![rat(2, 3), rat(-1, 5)]).unwrap();
        let id: RatMatrix = Matrix::identity(2);
        assert!(mixing_gap(&id, &y).unwrap().is_zero());
        let ones = Vector::from_fn(2, |_| Rat::one());
        assert!(mixing_gap(&uniform2(), &ones).unwrap().is_zero());
    }

    #[test]
    fn mixing_gap_chain_rule() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rand_rat = |d: i64| rat((rng.next_u64() % 17) as i64 - 8, d);
        for _ in 0..50 {
            let a = Matrix::from_fn(3, 3, |_, _| rand_rat(4));
            let b = Matrix::from_fn(3, 3, |_, _| rand_rat(5));
            let y = Vector::from_fn(3, |_| rand_rat(3));
            let lhs = mixing_gap(&b, &y).unwrap() + mixing_gap(&a, &b.mat_vec(&y).unwrap()).unwrap();
            assert_eq!(lhs, mixing_gap(&a.mat_mul(&b).unwrap(), &y).unwrap());
        }
    }

    #[test]
    fn mixing_gap_nonnegative_for_walk_matrices() {
        let p = gen_regular(8, 4, 3).unwrap();
        let m = p.rw_matrix(0, 8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let y = Vector::from_fn(4, |_| rat((rng.next_u64() % 33) as i64 - 16, 8));
            assert!(!mixing_gap(&m, &y).unwrap().is_negative());
        }
    }

    #[test]
    fn doubly_stochastic_walks_have_unit_two_norm() {
        for seed in 0..5u64 {
            let p = gen_regular(8, 4, seed).unwrap();
            let m = p.rw_matrix(0, 8).unwrap();
            assert!(is_doubly_stochastic(&m));
            let norm = crate::ratlin::two_norm_num(&m, 1e-9).unwrap();
            assert!(norm <= 1.0 + 1e-9, "two-norm {norm} above 1");
        }
    }

    #[test]
    fn sv_error_of_identity_candidate_is_zero() {
        let p = gen_regular(4, 3, 1).unwrap();
        let w = p.rw_matrix(0, 4).unwrap();
        let cert = sv_error(&w, &w, 1e-9).unwrap();
        assert!(cert.kernel_ok);
        assert_eq!(cert.eps_measured, 0.0);
    }

    #[test]
    fn sv_error_rejects_non_doubly_stochastic_targets() {
        let m = Matrix::new(2, 2, vec![rat_int(1), rat_int(1), rat_int(0), rat_int(0)]).unwrap();
        assert!(matches!(sv_error(&m, &m, 1e-9), Err(SvError::NotDoublyStochastic)));
    }

    #[test]
    fn uniform_walk_tilt_has_known_parameter() {
        // Tilting the uniform 2x2 walk by c along the disagreement direction
        // costs exactly 2c: the direction is a unit eigenvector of both Gram
        // complements.
        let w = uniform2();
        let cand = tilted2((1, 8));
        let cert = sv_error(&w, &cand, 1e-10).unwrap();
        assert!(cert.kernel_ok);
        assert!((cert.eps_measured - 0.25).abs() < 1e-9, "got {}", cert.eps_measured);
        let bis = sv_error_bisection(&w, &cand, 1e-10).unwrap();
        assert!((bis.eps_measured - 0.25).abs() < 1e-6, "got {}", bis.eps_measured);
    }

    #[test]
    fn kernel_violation_is_flagged_infinite() {
        // The identity walk fixes everything, so only the zero error matrix
        // admits a finite parameter.
        let id: RatMatrix = Matrix::identity(2);
        let cand = tilted2((1, 8)).sub(&uniform2()).unwrap().add(&id).unwrap();
        let cert = sv_error(&id, &cand, 1e-9).unwrap();
        assert!(!cert.kernel_ok);
        assert!(cert.eps_measured.is_infinite());
    }

    #[test]
    fn spectral_and_bisection_agree_on_random_instances() {
        for seed in 0..5u64 {
            let program = gen_regular(8, 3, seed).unwrap();
            let w = program.rw_matrix(0, 8).unwrap();
            let provider = crate::approx::BaseProvider::perturbed(
                std::sync::Arc::new(program),
                rat(1, 50),
                crate::approx::PerturbMode::Sv,
                seed,
            );
            let cand = provider.level0(0, 8).unwrap();
            let a = sv_error(&w, &cand, 1e-10).unwrap();
            let b = sv_error_bisection(&w, &cand, 1e-10).unwrap();
            assert!(a.kernel_ok && b.kernel_ok);
            assert!(
                (a.eps_measured - b.eps_measured).abs() <= 1e-6 * (1.0 + a.eps_measured),
                "spectral {} vs bisection {}",
                a.eps_measured,
                b.eps_measured
            );
        }
    }

    #[test]
    fn transpose_symmetry() {
        let program = gen_regular(8, 3, 7).unwrap();
        let w = program.rw_matrix(0, 8).unwrap();
        let provider = crate::approx::BaseProvider::perturbed(
            std::sync::Arc::new(program),
            rat(1, 40),
            crate::approx::PerturbMode::Sv,
            1,
        );
        let cand = provider.level0(0, 8).unwrap();
        let fwd = sv_error(&w, &cand, 1e-10).unwrap();
        let bwd = sv_error(&w.transpose(), &cand.transpose(), 1e-10).unwrap();
        assert!((fwd.eps_measured - bwd.eps_measured).abs() < 1e-8);
    }

    #[test]
    fn norm_check_passes_at_the_certified_parameter() {
        let w = uniform2();
        let cand = tilted2((1, 8));
        let ones = Vector::from_fn(2, |_| Rat::one());
        let dir = Vector::new(vec![Rat::one(), -Rat::one()]).unwrap();
        let rows = sv_norm_check(&w, &cand, 0.25, &[ones, dir], 1e-9).unwrap();
        assert!(rows.iter().all(|r| r.pass));
        // Equality is tight on the disagreement direction.
        assert!((rows[1].lhs - (rows[1].rhs - 1e-9)).abs() < 1e-9);
        // All-ones sees zero on both sides.
        assert!(rows[0].lhs == 0.0);
    }

    #[test]
    fn both_definition_forms_agree_on_samples() {
        let program = gen_regular(8, 4, 2).unwrap();
        let w = program.rw_matrix(0, 8).unwrap();
        let provider = crate::approx::BaseProvider::perturbed(
            std::sync::Arc::new(program),
            rat(1, 60),
            crate::approx::PerturbMode::Sv,
            4,
        );
        let cand = provider.level0(0, 8).unwrap();
        let cert = sv_error(&w, &cand, 1e-10).unwrap();
        let err = cand.sub(&w).unwrap();
        let wt = w.transpose();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut sample = |_| {
            Vector::from_fn(4, |_| rat((rng.next_u64() % 65) as i64 - 32, 16))
        };
        for i in 0..200 {
            let x = sample(i);
            let y = sample(i);
            let form = rat_to_f64(&x.dot(&err.mat_vec(&y).unwrap()).unwrap()).abs();
            let dx = rat_to_f64(&mixing_gap(&wt, &x).unwrap()).max(0.0);
            let dy = rat_to_f64(&mixing_gap(&w, &y).unwrap()).max(0.0);
            let geometric = cert.eps_measured * (dx * dy).sqrt() + 1e-9;
            let arithmetic = cert.eps_measured * (dx + dy) / 2.0 + 1e-9;
            assert!(form <= geometric, "geometric-mean form violated: {form} > {geometric}");
            assert!(form <= arithmetic, "arithmetic-mean form violated");
        }
    }

    #[test]
    fn harness_zero_for_exact_provider() {
        let program = std::sync::Arc::new(gen_regular(8, 3, 6).unwrap());
        let provider = crate::approx::BaseProvider::exact(program);
        let schedule = EpsSchedule::new(rat(1, 4), 8).unwrap();
        let rows = sv_main_harness(&provider, &schedule, 2, 1e-9).unwrap();
        assert!(rows.iter().all(|r| r.pass && r.measured <= 1e-9));
    }
}
