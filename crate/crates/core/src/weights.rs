//! The edge-disagreement weight measure for regular programs.
//!
//! The layer-i weight of a value vector y charges each edge (u, b) of the
//! layer with |avg(successors of u) - y[successor on b]|; the total weight of
//! an interval sums layer weights against the suffix walk. For regular
//! programs the total weight never exceeds w^2 per unit of sup norm, which is
//! what lets base-case errors propagate through the level recursion without
//! blowing up. The checker here certifies per-vector error ratios on a
//! structured test set (a lower bound for the true supremum), and the harness
//! replays the propagation bound level by level.

use num::{One, Signed, Zero};
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::approx::{bs_intervals, level_matrix, BaseProvider, EpsSchedule, LevelKey};
use crate::ratlin::{rat, rat_int, LinAlgError, Vector};
use crate::robp::{RegularRobp, RobpError};
use crate::{Rat, RatMatrix, RatVector};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("test set must be nonempty")]
    EmptyTestSet,
    #[error(
        "test vector {index} has zero weight but a nonzero image; \
         the candidate is not a weight approximation for any finite budget"
    )]
    ZeroWeightViolation { index: usize },
    #[error("layer index {index} out of range 1..={n}")]
    LayerOutOfRange { index: usize, n: usize },
    #[error("base certification failed at ({l},{r}): measured {measured} > required {required}")]
    BaseCertification { l: usize, r: usize, measured: String, required: String },
    #[error(transparent)]
    Robp(#[from] RobpError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("{0}")]
    Approx(String),
}

impl From<crate::approx::ApproxError> for WeightError {
    fn from(e: crate::approx::ApproxError) -> Self {
        WeightError::Approx(e.to_string())
    }
}

/// The uniform weight cap w^2.
pub fn default_weight_cap(w: usize) -> Rat {
    rat_int((w * w) as i64)
}

/// Exact layer-i weight of y: sum over states and bits of
/// |(M_i y)[u] - y[successor of u on b]|.
pub fn layer_weight(b: &RegularRobp, i: usize, y: &RatVector) -> Result<Rat, WeightError> {
    if i == 0 || i > b.n() {
        return Err(WeightError::LayerOutOfRange { index: i, n: b.n() });
    }
    let avg = b.layer_walk_matrix(i)?.mat_vec(y)?;
    let mut acc = Rat::zero();
    for u in 0..b.w() {
        for bit in [false, true] {
            let target = b.step(i, u, bit);
            acc += (avg.get(u) - y.get(target)).abs();
        }
    }
    Ok(acc)
}

/// Exact total weight of y between layers l and r:
/// sum over i of the layer-i weight on the suffix walk M_{i..r} y.
pub fn total_weight(b: &RegularRobp, l: usize, r: usize, y: &RatVector) -> Result<Rat, WeightError> {
    if l > r || r > b.n() {
        return Err(WeightError::Robp(RobpError::BadInterval { l, r, n: b.n() }));
    }
    let mut acc = Rat::zero();
    let mut suffix = y.clone();
    for i in ((l + 1)..=r).rev() {
        acc += layer_weight(b, i, &suffix)?;
        suffix = b.layer_walk_matrix(i)?.mat_vec(&suffix)?;
    }
    Ok(acc)
}

/// Standard basis vectors, all sign vectors for small widths, and seeded
/// random rational vectors. The workhorse test set for the weight checker.
pub fn structured_test_set(w: usize, seed: u64, random_count: usize) -> Vec<RatVector> {
    let mut set = Vec::new();
    for i in 0..w {
        set.push(Vector::from_fn(w, |j| if i == j { Rat::one() } else { Rat::zero() }));
    }
    if w <= 10 {
        for mask in 0..(1u32 << w) {
            set.push(Vector::from_fn(w, |j| {
                if (mask >> j) & 1 == 1 {
                    Rat::one()
                } else {
                    -Rat::one()
                }
            }));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_count {
        set.push(Vector::from_fn(w, |_| {
            let x = (rng.next_u64() % 129) as i64 - 64;
            rat(x, 64)
        }));
    }
    set
}

/// Certified lower bound on the weight-approximation parameter of a
/// candidate for the walk matrix of (l, r):
///
///   max over test vectors y with positive weight of
///     ||(candidate - M_{l..r}) y||_inf * W* / W(l, r, y).
///
/// Vectors of zero weight must be annihilated exactly by the error matrix
/// (constants always are, thanks to unit row sums); a violation means no
/// finite budget fits and is reported as an error.
pub fn weight_approx_error(
    b: &RegularRobp,
    candidate: &RatMatrix,
    l: usize,
    r: usize,
    test_set: &[RatVector],
    weight_cap: &Rat,
) -> Result<Rat, WeightError> {
    if test_set.is_empty() {
        return Err(WeightError::EmptyTestSet);
    }
    let truth = b.rw_matrix(l, r)?;
    let err = candidate.sub(&truth)?;
    let mut worst = Rat::zero();
    for (index, y) in test_set.iter().enumerate() {
        let weight = total_weight(b, l, r, y)?;
        let image = err.mat_vec(y)?;
        if weight.is_zero() {
            if !image.is_zero() {
                return Err(WeightError::ZeroWeightViolation { index });
            }
            continue;
        }
        let ratio = image.inf_norm() * weight_cap.clone() / weight;
        if ratio > worst {
            worst = ratio;
        }
    }
    Ok(worst)
}

/// One key of the propagation report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WeightHarnessRow {
    pub l: usize,
    pub r: usize,
    pub k: u32,
    pub t: u32,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub measured: Rat,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub bound: Rat,
    pub pass: bool,
}

/// Replays the weight-propagation bound: with every base matrix certified at
/// eps(0)/3 on the test set, the level-k matrix on a scale-t interval must
/// measure within C_t * eps(k). Base certification failures abort with the
/// offending interval.
pub fn wprg_main_harness(
    provider: &BaseProvider,
    schedule: &EpsSchedule,
    k_max: u32,
    test_set: &[RatVector],
) -> Result<Vec<WeightHarnessRow>, WeightError> {
    let program = provider.program().clone();
    let n = program.n();
    let weight_cap = default_weight_cap(program.w());
    let base_budget = schedule.eps(0) / rat_int(3);
    for (l, r) in bs_intervals(n) {
        let base = provider.level0(l, r)?;
        let measured = weight_approx_error(&program, &base, l, r, test_set, &weight_cap)?;
        if measured > base_budget {
            return Err(WeightError::BaseCertification {
                l,
                r,
                measured: measured.to_string(),
                required: base_budget.to_string(),
            });
        }
    }
    let mut rows = Vec::new();
    for (l, r) in bs_intervals(n) {
        let t = (r - l).trailing_zeros();
        for k in 0..=k_max {
            let lvl = level_matrix(provider, LevelKey::new(l, r, k))?;
            let measured = weight_approx_error(&program, &lvl, l, r, test_set, &weight_cap)?;
            let bound = schedule.c_t(t) * schedule.eps(k);
            let pass = measured <= bound;
            rows.push(WeightHarnessRow { l, r, k, t, measured, bound, pass });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::PerturbMode;
    use crate::robp::{gen_regular, parity_program};
    use std::sync::Arc;

    fn random_vector(w: usize, seed: u64) -> RatVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Vector::from_fn(w, |_| {
            let x = (rng.next_u64() % 41) as i64 - 20;
            rat(x, 8)
        })
    }

    #[test]
    fn constant_vectors_have_zero_weight() {
        let p = gen_regular(8, 4, 2).unwrap();
        let y = Vector::from_fn(4, |_| rat(3, 7));
        for i in 1..=8 {
            assert!(layer_weight(&p, i, &y).unwrap().is_zero());
        }
        assert!(total_weight(&p, 0, 8, &y).unwrap().is_zero());
    }

    #[test]
    fn identity_layer_has_zero_weight() {
        let layer = vec![[0, 0], [1, 1], [2, 2]];
        let p = RegularRobp::new(3, vec![layer], 0, &[0]).unwrap();
        let y = random_vector(3, 1);
        assert!(layer_weight(&p, 1, &y).unwrap().is_zero());
    }

    #[test]
    fn parity_layer_weight_on_basis_vector() {
        let p = parity_program(2, true);
        let y = Vector::new(vec![Rat::one(), Rat::zero()]).unwrap();
        assert_eq!(layer_weight(&p, 1, &y).unwrap(), rat_int(2));
    }

    #[test]
    fn empty_interval_weight_is_zero() {
        let p = gen_regular(4, 3, 1).unwrap();
        let y = random_vector(3, 2);
        assert!(total_weight(&p, 2, 2, &y).unwrap().is_zero());
    }

    #[test]
    fn weight_additivity_and_monotonicity() {
        for seed in 0..10u64 {
            let p = gen_regular(8, 3, seed).unwrap();
            let y = random_vector(3, seed + 100);
            let (l, m, r) = (1, 4, 7);
            let suffix = p.rw_matrix(m, r).unwrap().mat_vec(&y).unwrap();
            let left = total_weight(&p, l, m, &suffix).unwrap();
            let right = total_weight(&p, m, r, &y).unwrap();
            let whole = total_weight(&p, l, r, &y).unwrap();
            assert_eq!(whole, left.clone() + right.clone());
            assert!(left.max(right) <= whole);
        }
    }

    #[test]
    fn weight_bound_by_width_squared() {
        for seed in 0..10u64 {
            let p = gen_regular(8, 4, seed).unwrap();
            let y = random_vector(4, seed + 3);
            let wt = total_weight(&p, 0, 8, &y).unwrap();
            assert!(wt <= rat_int(16) * y.inf_norm());
        }
    }

    #[test]
    fn exact_candidate_measures_zero() {
        let p = gen_regular(8, 3, 4).unwrap();
        let set = structured_test_set(3, 9, 4);
        let cap = default_weight_cap(3);
        let m = p.rw_matrix(0, 8).unwrap();
        assert!(weight_approx_error(&p, &m, 0, 8, &set, &cap).unwrap().is_zero());
        assert!(matches!(
            weight_approx_error(&p, &m, 0, 8, &[], &cap),
            Err(WeightError::EmptyTestSet)
        ));
    }

    #[test]
    fn zero_weight_violation_is_reported() {
        // An error matrix with nonzero row sums pushes constants off zero.
        let p = gen_regular(4, 2, 8).unwrap();
        let mut candidate = p.rw_matrix(0, 4).unwrap();
        candidate.set(0, 0, candidate.get(0, 0) + rat(1, 10));
        let set = structured_test_set(2, 3, 2);
        let cap = default_weight_cap(2);
        assert!(matches!(
            weight_approx_error(&p, &candidate, 0, 4, &set, &cap),
            Err(WeightError::ZeroWeightViolation { .. })
        ));
    }

    #[test]
    fn perturbed_weight_provider_round_trips_through_checker() {
        let program = Arc::new(gen_regular(8, 3, 21).unwrap());
        let delta = rat(1, 30);
        let provider =
            BaseProvider::perturbed(program.clone(), delta.clone(), PerturbMode::Weight, 7);
        let set = structured_test_set(3, 0x5eed ^ 7, 8);
        let cap = default_weight_cap(3);
        for (l, r) in bs_intervals(8) {
            let base = provider.level0(l, r).unwrap();
            let measured = weight_approx_error(&program, &base, l, r, &set, &cap).unwrap();
            assert!(measured <= delta, "measured {measured} over budget at ({l},{r})");
        }
    }

    #[test]
    fn harness_trivial_for_exact_provider() {
        let program = Arc::new(gen_regular(8, 2, 5).unwrap());
        let provider = BaseProvider::exact(program);
        let schedule = EpsSchedule::new(rat(1, 4), 8).unwrap();
        let set = structured_test_set(2, 1, 4);
        let rows = wprg_main_harness(&provider, &schedule, 2, &set).unwrap();
        assert!(rows.iter().all(|row| row.pass && row.measured.is_zero()));
    }

    #[test]
    fn unstructured_perturbations_fail_the_definition() {
        // This program has a nonconstant direction of zero total weight; an
        // inf-norm perturbation does not annihilate it, and the checker must
        // refuse to assign any finite parameter.
        let program = Arc::new(gen_regular(8, 3, 5).unwrap());
        let provider = BaseProvider::perturbed(program, rat(1, 4), PerturbMode::Inf, 2);
        let schedule = EpsSchedule::new(rat(1, 4), 8).unwrap();
        let set = structured_test_set(3, 1, 4);
        assert!(matches!(
            wprg_main_harness(&provider, &schedule, 1, &set),
            Err(WeightError::ZeroWeightViolation { .. })
        ));
    }

    #[test]
    fn harness_rejects_oversized_bases() {
        let program = Arc::new(gen_regular(8, 3, 5).unwrap());
        // Budget far larger than eps(0)/3 forces certification failure.
        let provider = BaseProvider::perturbed(program, rat(1, 4), PerturbMode::Weight, 2);
        let schedule = EpsSchedule::new(rat(1, 4), 8).unwrap();
        let set = structured_test_set(3, 1, 4);
        assert!(matches!(
            wprg_main_harness(&provider, &schedule, 1, &set),
            Err(WeightError::BaseCertification { .. })
        ));
    }
}
