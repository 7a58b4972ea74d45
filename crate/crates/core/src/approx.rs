//! The level-k approximation recursion over binary-splitting intervals.
//!
//! Given level-0 base matrices for every binary-splitting interval, level k
//! on an interval splits it at the midpoint m and combines
//!
//! ```text
//!   sum_{i+j=k} M^(i)[l..m] M^(j)[m..r]  -  sum_{i+j=k-1} M^(i)[l..m] M^(j)[m..r]
//! ```
//!
//! with single layers exact at every level. All algebra is exact rational and
//! memoized per provider. Base cases are pluggable: exact, perturbed with a
//! controlled error budget, PRG-backed averages, or grid-rounded matrices.

use num::{One, Signed, Zero};
use rand_core::{RngCore, SeedableRng};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

use crate::ratlin::{
    self, kernel_basis, projector_onto_complement, rat_from_f64, Matrix, LinAlgError,
};
use crate::robp::{RegularRobp, RobpError};
use crate::{Rat, RatMatrix};

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("gamma must lie strictly between 0 and 1/2")]
    BadGamma,
    #[error("schedule needs a power-of-two length of at least 2 (got {0})")]
    BadLength(usize),
    #[error("key ({l},{r}) out of range for length {n}")]
    KeyOutOfRange { l: usize, r: usize, n: usize },
    #[error("({l},{r}) is not a binary-splitting interval; use the generalized recursion")]
    NotBinarySplit { l: usize, r: usize },
    #[error("identity residual needs r-l > 1 and k >= 1 (got ({l},{r}) level {k})")]
    BadResidualKey { l: usize, r: usize, k: u32 },
    #[error("generator seed space 2^{0} too large for exact averaging")]
    SeedSpaceTooLarge(u32),
    #[error(transparent)]
    Robp(#[from] RobpError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("weight measurement failed: {0}")]
    Weight(String),
    #[error("sv measurement failed: {0}")]
    Sv(String),
}

/// Address of one approximation matrix: interval endpoints and level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub struct LevelKey {
    pub l: usize,
    pub r: usize,
    pub k: u32,
}

impl LevelKey {
    pub fn new(l: usize, r: usize, k: u32) -> Self {
        Self { l, r, k }
    }
}

/// True iff (l, r) is a binary-splitting interval of [0, n]: the length is a
/// power of two dividing l.
pub fn in_bs(l: usize, r: usize, n: usize) -> bool {
    if l >= r || r > n {
        return false;
    }
    let len = r - l;
    len.is_power_of_two() && l.is_multiple_of(len)
}

/// All binary-splitting intervals of [0, n], ordered by (length, left end).
pub fn bs_intervals(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut len = 1;
    while len <= n {
        let mut l = 0;
        while l + len <= n {
            out.push((l, l + len));
            l += len;
        }
        len *= 2;
    }
    out
}

/// Which denominator family the error schedule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// gamma^(i+1) / (constant * log2(n) * (i+1)^2)
    Standard,
    /// gamma^(i+1) / ((2*level_cap + 1) * log2(n)); valid up to `level_cap`.
    UniformDenominator { level_cap: u32 },
}

/// The per-level error budget. log2(n) is the exact integer exponent.
#[derive(Debug, Clone)]
pub struct EpsSchedule {
    gamma: Rat,
    n: usize,
    log2n: u32,
    constant: u32,
    kind: ScheduleKind,
}

/// One row of the schedule-inequality report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpsCheckRow {
    pub k: u32,
    #[serde(with = "ratlin::rat_serde")]
    pub lhs: Rat,
    #[serde(with = "ratlin::rat_serde")]
    pub rhs: Rat,
    pub pass: bool,
}

impl EpsSchedule {
    pub fn new(gamma: Rat, n: usize) -> Result<Self, ApproxError> {
        Self::with_constant(gamma, n, 10)
    }

    pub fn with_constant(gamma: Rat, n: usize, constant: u32) -> Result<Self, ApproxError> {
        Self::build(gamma, n, constant, ScheduleKind::Standard)
    }

    /// The flat-denominator variant: same geometric decay, denominator
    /// (2K+1) log2(n) for a fixed level cap K.
    pub fn uniform_denominator(gamma: Rat, n: usize, level_cap: u32) -> Result<Self, ApproxError> {
        Self::build(gamma, n, 1, ScheduleKind::UniformDenominator { level_cap })
    }

    fn build(gamma: Rat, n: usize, constant: u32, kind: ScheduleKind) -> Result<Self, ApproxError> {
        if gamma <= Rat::zero() || gamma >= ratlin::rat(1, 2) {
            return Err(ApproxError::BadGamma);
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(ApproxError::BadLength(n));
        }
        let log2n = n.trailing_zeros();
        Ok(Self { gamma, n, log2n, constant, kind })
    }

    pub fn gamma(&self) -> &Rat {
        &self.gamma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log2n(&self) -> u32 {
        self.log2n
    }

    /// Exact value of the level-i budget.
    pub fn eps(&self, i: u32) -> Rat {
        let gpow = num::pow::pow(self.gamma.clone(), i as usize + 1);
        let denom = match self.kind {
            ScheduleKind::Standard => {
                ratlin::rat_int(self.constant as i64)
                    * ratlin::rat_int(self.log2n as i64)
                    * ratlin::rat_int((i as i64 + 1) * (i as i64 + 1))
            }
            ScheduleKind::UniformDenominator { level_cap } => {
                ratlin::rat_int(2 * level_cap as i64 + 1) * ratlin::rat_int(self.log2n as i64)
            }
        };
        gpow / denom
    }

    /// Per-scale inflation constant (1 + 1/log2 n)^t / 3.
    pub fn c_t(&self, t: u32) -> Rat {
        let base = Rat::one() + Rat::one() / ratlin::rat_int(self.log2n as i64);
        num::pow::pow(base, t as usize) / ratlin::rat_int(3)
    }

    /// Exact check that the convolution of budgets at levels k and k-1 stays
    /// below eps(k)/log2(n), for each k up to `k_max`.
    pub fn check_inequality(&self, k_max: u32) -> Vec<EpsCheckRow> {
        let mut rows = Vec::new();
        for k in 0..=k_max {
            let mut lhs = Rat::zero();
            for i in 0..=k {
                lhs += self.eps(i) * self.eps(k - i);
            }
            if k > 0 {
                for i in 0..k {
                    lhs += self.eps(i) * self.eps(k - 1 - i);
                }
            }
            let rhs = self.eps(k) / ratlin::rat_int(self.log2n as i64);
            let pass = lhs <= rhs;
            rows.push(EpsCheckRow { k, lhs, rhs, pass });
        }
        rows
    }

    /// Smallest level whose budget is at most `bound`. The budgets decrease
    /// strictly, so this terminates for every positive bound.
    pub fn min_level_within(&self, bound: &Rat) -> u32 {
        assert!(bound.is_positive(), "bound must be positive");
        let mut k = 0;
        while &self.eps(k) > bound {
            k += 1;
        }
        k
    }
}

/// Source of pseudorandom bit strings used by the PRG-backed provider.
/// Implementations must be deterministic in the seed.
pub trait BitGenerator: Send + Sync {
    fn seed_bits(&self) -> u32;
    /// First `count` output bits on the given seed.
    fn bits(&self, seed: u64, count: usize) -> Vec<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PerturbMode {
    Inf,
    Weight,
    Sv,
}

enum ProviderKind {
    Exact,
    Perturbed { delta: Rat, mode: PerturbMode, seed: u64 },
    PrgBacked { generator: Arc<dyn BitGenerator> },
    Rounded { grid_log2: u32 },
}

impl std::fmt::Debug for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderKind::Exact => write!(f, "Exact"),
            ProviderKind::Perturbed { delta, mode, seed } => {
                write!(f, "Perturbed({delta}, {mode:?}, seed {seed})")
            }
            ProviderKind::PrgBacked { generator } => {
                write!(f, "PrgBacked(d0={})", generator.seed_bits())
            }
            ProviderKind::Rounded { grid_log2 } => write!(f, "Rounded(2^-{grid_log2})"),
        }
    }
}

/// A program together with a level-0 source and memo caches for both the
/// base matrices and the level-k recursion. Caches are internally locked so
/// a provider can be shared read-only across threads.
pub struct BaseProvider {
    program: Arc<RegularRobp>,
    kind: ProviderKind,
    base_cache: Mutex<HashMap<(usize, usize), RatMatrix>>,
    level_cache: Mutex<HashMap<(usize, usize, u32), RatMatrix>>,
}

impl std::fmt::Debug for BaseProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BaseProvider({:?}, n={}, w={})", self.kind, self.program.n(), self.program.w())
    }
}

/// Seed-space cap for exact averaging in the PRG-backed provider.
const PRG_SEED_BITS_CAP: u32 = 24;

impl BaseProvider {
    fn with_kind(program: Arc<RegularRobp>, kind: ProviderKind) -> Self {
        Self {
            program,
            kind,
            base_cache: Mutex::new(HashMap::new()),
            level_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn exact(program: Arc<RegularRobp>) -> Self {
        Self::with_kind(program, ProviderKind::Exact)
    }

    pub fn perturbed(program: Arc<RegularRobp>, delta: Rat, mode: PerturbMode, seed: u64) -> Self {
        assert!(!delta.is_negative(), "perturbation budget must be nonnegative");
        Self::with_kind(program, ProviderKind::Perturbed { delta, mode, seed })
    }

    pub fn prg_backed(program: Arc<RegularRobp>, generator: Arc<dyn BitGenerator>) -> Self {
        Self::with_kind(program, ProviderKind::PrgBacked { generator })
    }

    pub fn rounded(program: Arc<RegularRobp>, grid_log2: u32) -> Self {
        Self::with_kind(program, ProviderKind::Rounded { grid_log2 })
    }

    pub fn program(&self) -> &Arc<RegularRobp> {
        &self.program
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ProviderKind::Exact => "exact",
            ProviderKind::Perturbed { .. } => "perturbed",
            ProviderKind::PrgBacked { .. } => "prg",
            ProviderKind::Rounded { .. } => "rounded",
        }
    }

    /// (base matrices cached, level matrices cached)
    pub fn cache_sizes(&self) -> (usize, usize) {
        (
            self.base_cache.lock().expect("cache lock").len(),
            self.level_cache.lock().expect("cache lock").len(),
        )
    }

    /// Level-0 matrix for a binary-splitting interval (or l == r).
    /// Single layers are exact under every variant.
    pub fn level0(&self, l: usize, r: usize) -> Result<RatMatrix, ApproxError> {
        let n = self.program.n();
        if l == r {
            if r > n {
                return Err(ApproxError::KeyOutOfRange { l, r, n });
            }
            return Ok(Matrix::identity(self.program.w()));
        }
        if !in_bs(l, r, n) {
            return Err(ApproxError::NotBinarySplit { l, r });
        }
        if r - l == 1 {
            return Ok(self.program.layer_walk_matrix(r)?);
        }
        if let Some(m) = self.base_cache.lock().expect("cache lock").get(&(l, r)) {
            return Ok(m.clone());
        }
        let m = self.compute_level0(l, r)?;
        self.base_cache.lock().expect("cache lock").insert((l, r), m.clone());
        Ok(m)
    }

    fn compute_level0(&self, l: usize, r: usize) -> Result<RatMatrix, ApproxError> {
        let exact = self.program.rw_matrix(l, r)?;
        match &self.kind {
            ProviderKind::Exact => Ok(exact),
            ProviderKind::Rounded { grid_log2 } => {
                let rounded = round_to_grid(&exact, *grid_log2);
                let rebalanced = restore_marginals(&rounded);
                let raw_err = rebalanced.sub(&exact)?;
                let err = project_to_sv_kernels(&exact, &raw_err)?;
                Ok(exact.add(&err)?)
            }
            ProviderKind::PrgBacked { generator } => {
                let d0 = generator.seed_bits();
                if d0 > PRG_SEED_BITS_CAP {
                    return Err(ApproxError::SeedSpaceTooLarge(d0));
                }
                let w = self.program.w();
                let len = r - l;
                let mut counts = vec![0u64; w * w];
                for seed in 0u64..(1 << d0) {
                    let bits = generator.bits(seed, len);
                    let map = self.program.walk_map(l, r, &bits)?;
                    for (u, &v) in map.iter().enumerate() {
                        counts[u * w + v] += 1;
                    }
                }
                let total = ratlin::rat_int(1i64 << d0);
                Ok(Matrix::from_fn(w, w, |i, j| {
                    Rat::from_integer(counts[i * w + j].into()) / total.clone()
                }))
            }
            ProviderKind::Perturbed { delta, mode, seed } => {
                if delta.is_zero() || self.program.w() == 1 {
                    return Ok(exact);
                }
                let raw = centered_random_matrix(self.program.w(), *seed, l, r);
                let scaled = match mode {
                    PerturbMode::Inf => {
                        let norm = raw.inf_norm();
                        if norm.is_zero() {
                            return Ok(exact);
                        }
                        raw.scale(&(delta.clone() / norm))
                    }
                    PerturbMode::Weight => {
                        let err = project_to_zero_weight_complement(&self.program, l, r, &raw)?;
                        let candidate = exact.add(&err)?;
                        let test_set = crate::weights::structured_test_set(
                            self.program.w(),
                            0x5eed ^ seed,
                            8,
                        );
                        let w_star = crate::weights::default_weight_cap(self.program.w());
                        let measured = crate::weights::weight_approx_error(
                            &self.program,
                            &candidate,
                            l,
                            r,
                            &test_set,
                            &w_star,
                        )
                        .map_err(|e| ApproxError::Weight(e.to_string()))?;
                        if measured.is_zero() {
                            return Ok(exact);
                        }
                        // Scale to half the budget: the checker reports a
                        // certified lower bound, so leave headroom.
                        err.scale(&(delta.clone() / (ratlin::rat_int(2) * measured)))
                    }
                    PerturbMode::Sv => {
                        let err = project_to_sv_kernels(&exact, &raw)?;
                        let candidate = exact.add(&err)?;
                        let cert = crate::svapprox::sv_error(&exact, &candidate, 1e-12)
                            .map_err(|e| ApproxError::Sv(e.to_string()))?;
                        if !cert.kernel_ok || cert.eps_measured == 0.0 {
                            return Ok(exact);
                        }
                        let measured = rat_from_f64(cert.eps_measured);
                        err.scale(&(delta.clone() / (ratlin::rat_int(2) * measured)))
                    }
                };
                Ok(exact.add(&scaled)?)
            }
        }
    }
}

/// Entrywise rounding to the dyadic grid 2^-g, ties away from zero.
fn round_to_grid(m: &RatMatrix, g: u32) -> RatMatrix {
    let scale = ratlin::rat_int(1i64 << g.min(62));
    let scale = if g > 62 {
        num::pow::pow(ratlin::rat_int(2), g as usize)
    } else {
        scale
    };
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        let x = m.get(i, j) * scale.clone();
        let rounded = (x + ratlin::rat(1, 2)).floor();
        rounded / scale.clone()
    })
}

/// Adds the rank-one-style correction restoring unit row and column sums.
fn restore_marginals(m: &RatMatrix) -> RatMatrix {
    let w = m.rows();
    let wr = ratlin::rat_int(w as i64);
    let rows = m.row_sums();
    let cols = m.col_sums();
    let total: Rat = rows.entries().iter().cloned().sum();
    let excess = (ratlin::rat_int(w as i64) - total) / (wr.clone() * wr.clone());
    Matrix::from_fn(w, w, |i, j| {
        m.get(i, j)
            + (Rat::one() - rows.get(i)) / wr.clone()
            + (Rat::one() - cols.get(j)) / wr.clone()
            - excess.clone()
    })
}

/// Deterministic dense matrix with zero row and column sums.
fn centered_random_matrix(w: usize, seed: u64, l: usize, r: usize) -> RatMatrix {
    let mix = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((l as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
        .wrapping_add((r as u64).wrapping_mul(0x1656_67b1_9e37_79f9));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix);
    let denom = 1i64 << 20;
    let raw = Matrix::from_fn(w, w, |_, _| {
        let x = (rng.next_u64() % (2 * denom as u64 + 1)) as i64 - denom;
        ratlin::rat(x, denom)
    });
    let wr = ratlin::rat_int(w as i64);
    let rows = raw.row_sums();
    let cols = raw.col_sums();
    let total: Rat = rows.entries().iter().cloned().sum();
    Matrix::from_fn(w, w, |i, j| {
        raw.get(i, j) - rows.get(i) / wr.clone() - cols.get(j) / wr.clone()
            + total.clone() / (wr.clone() * wr.clone())
    })
}

/// Projects an error matrix so it vanishes on the exact kernels of
/// I - W W^T (left) and I - W^T W (right). Keeps unit marginals intact since
/// the all-ones vector lies in both kernels.
fn project_to_sv_kernels(walk: &RatMatrix, err: &RatMatrix) -> Result<RatMatrix, ApproxError> {
    let w = walk.rows();
    let wt = walk.transpose();
    let left_gram = Matrix::identity(w).sub(&walk.mat_mul(&wt)?)?;
    let right_gram = Matrix::identity(w).sub(&wt.mat_mul(walk)?)?;
    let p_left = projector_onto_complement(&kernel_basis(&left_gram), w);
    let p_right = projector_onto_complement(&kernel_basis(&right_gram), w);
    Ok(p_left.mat_mul(err)?.mat_mul(&p_right)?)
}

/// Projects an error matrix so it annihilates every direction of zero total
/// weight on (l, r); constants always belong to that subspace.
fn project_to_zero_weight_complement(
    program: &RegularRobp,
    l: usize,
    r: usize,
    err: &RatMatrix,
) -> Result<RatMatrix, ApproxError> {
    let w = program.w();
    // Linear functionals whose common kernel is {y : total weight = 0}:
    // for each layer i and state u, (M_i z)[u] - z[B_i(u,b)] with z = M_{i..r} y.
    let mut rows: Vec<Rat> = Vec::new();
    let mut count = 0;
    let mut suffix: RatMatrix = Matrix::identity(w);
    for i in (l + 1..=r).rev() {
        let layer_avg = program.layer_walk_matrix(i)?;
        let avg_through = layer_avg.mat_mul(&suffix)?;
        for u in 0..w {
            for bit in [false, true] {
                let target = program.step(i, u, bit);
                for j in 0..w {
                    rows.push(avg_through.get(u, j) - suffix.get(target, j));
                }
                count += 1;
            }
        }
        suffix = layer_avg.mat_mul(&suffix)?;
    }
    let constraints = Matrix::new(count, w, rows)?;
    let zero_weight_basis = kernel_basis(&constraints);
    let proj = projector_onto_complement(&zero_weight_basis, w);
    Ok(err.mat_mul(&proj)?)
}

fn validate_key(p: &BaseProvider, key: LevelKey) -> Result<(), ApproxError> {
    let n = p.program.n();
    if key.r > n || key.l > key.r {
        return Err(ApproxError::KeyOutOfRange { l: key.l, r: key.r, n });
    }
    if key.l != key.r && !in_bs(key.l, key.r, n) {
        return Err(ApproxError::NotBinarySplit { l: key.l, r: key.r });
    }
    Ok(())
}

/// The level-k matrix at `key`, memoized inside the provider.
pub fn level_matrix(p: &BaseProvider, key: LevelKey) -> Result<RatMatrix, ApproxError> {
    validate_key(p, key)?;
    let LevelKey { l, r, k } = key;
    if l == r {
        return Ok(Matrix::identity(p.program.w()));
    }
    if r - l == 1 {
        return Ok(p.program.layer_walk_matrix(r)?);
    }
    if k == 0 {
        return p.level0(l, r);
    }
    if let Some(m) = p.level_cache.lock().expect("cache lock").get(&(l, r, k)) {
        return Ok(m.clone());
    }
    let m = (l + r) / 2;
    let mut acc: RatMatrix = Matrix::zeros(p.program.w(), p.program.w());
    for i in 0..=k {
        let left = level_matrix(p, LevelKey::new(l, m, i))?;
        let right = level_matrix(p, LevelKey::new(m, r, k - i))?;
        acc = acc.add(&left.mat_mul(&right)?)?;
    }
    for i in 0..k {
        let left = level_matrix(p, LevelKey::new(l, m, i))?;
        let right = level_matrix(p, LevelKey::new(m, r, k - 1 - i))?;
        acc = acc.sub(&left.mat_mul(&right)?)?;
    }
    p.level_cache.lock().expect("cache lock").insert((l, r, k), acc.clone());
    Ok(acc)
}

/// Deviation of the level-k matrix from the true random-walk matrix.
pub fn level_delta(p: &BaseProvider, key: LevelKey) -> Result<RatMatrix, ApproxError> {
    let lvl = level_matrix(p, key)?;
    let truth = p.program.rw_matrix(key.l, key.r)?;
    Ok(lvl.sub(&truth)?)
}

/// Residual of the split identity for the deviations: the difference between
/// the level-k deviation on (l, r) and its midpoint expansion
///
/// ```text
///   sum_{i+j=k} D^(i) D^(j) - sum_{i+j=k-1} D^(i) D^(j)
///     + D^(k)[l..m] M[m..r] + M[l..m] D^(k)[m..r]
/// ```
///
/// This must be the exact zero matrix for every provider; it is an algebraic
/// identity of the recursion, not a property of the base cases.
pub fn delta_identity_residual(p: &BaseProvider, key: LevelKey) -> Result<RatMatrix, ApproxError> {
    validate_key(p, key)?;
    let LevelKey { l, r, k } = key;
    if r - l <= 1 || k == 0 {
        return Err(ApproxError::BadResidualKey { l, r, k });
    }
    let m = (l + r) / 2;
    let lhs = level_delta(p, key)?;
    let mut rhs: RatMatrix = Matrix::zeros(p.program.w(), p.program.w());
    for i in 0..=k {
        let a = level_delta(p, LevelKey::new(l, m, i))?;
        let b = level_delta(p, LevelKey::new(m, r, k - i))?;
        rhs = rhs.add(&a.mat_mul(&b)?)?;
    }
    for i in 0..k {
        let a = level_delta(p, LevelKey::new(l, m, i))?;
        let b = level_delta(p, LevelKey::new(m, r, k - 1 - i))?;
        rhs = rhs.sub(&a.mat_mul(&b)?)?;
    }
    let dk_left = level_delta(p, LevelKey::new(l, m, k))?;
    let dk_right = level_delta(p, LevelKey::new(m, r, k))?;
    rhs = rhs.add(&dk_left.mat_mul(&p.program.rw_matrix(m, r)?)?)?;
    rhs = rhs.add(&p.program.rw_matrix(l, m)?.mat_mul(&dk_right)?)?;
    Ok(lhs.sub(&rhs)?)
}

/// Convenience constructor matching the CLI's provider flags.
pub fn make_perturbed_provider(
    program: Arc<RegularRobp>,
    delta: Rat,
    mode: PerturbMode,
    seed: u64,
) -> BaseProvider {
    BaseProvider::perturbed(program, delta, mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratlin::{rat, rat_int};
    use crate::robp::gen_regular;

    #[test]
    fn bs_membership() {
        assert!(in_bs(0, 8, 8));
        assert!(in_bs(4, 6, 8));
        assert!(in_bs(3, 4, 8));
        assert!(!in_bs(1, 3, 8));
        assert!(!in_bs(2, 8, 8));
        assert!(!in_bs(0, 0, 8));
        assert_eq!(bs_intervals(8).len(), 8 + 4 + 2 + 1);
    }

    #[test]
    fn schedule_values() {
        let s = EpsSchedule::new(rat(1, 4), 16).unwrap();
        assert_eq!(s.eps(0), rat(1, 160));
        assert_eq!(s.eps(1), rat(1, 2560));
        // eps(i+1)/eps(i) < gamma
        for i in 0..6 {
            assert!(s.eps(i + 1) / s.eps(i) < rat(1, 4));
        }
        assert!(EpsSchedule::new(rat(1, 2), 16).is_err());
        assert!(EpsSchedule::new(rat(-1, 4), 16).is_err());
        assert!(EpsSchedule::new(rat(1, 4), 12).is_err());
    }

    #[test]
    fn schedule_inequality_frozen_values() {
        let s = EpsSchedule::new(rat(1, 4), 16).unwrap();
        let rows = s.check_inequality(1);
        // k = 0: eps0^2 = 1/25600 against eps0/4 = 1/640
        assert_eq!(rows[0].lhs, rat(1, 25600));
        assert_eq!(rows[0].rhs, rat(1, 640));
        assert!(rows[0].pass);
        // k = 1: 2 eps0 eps1 + eps0^2 = 9/204800 against eps1/4 = 1/10240
        assert_eq!(rows[1].lhs, rat(9, 204800));
        assert_eq!(rows[1].rhs, rat(1, 10240));
        assert!(rows[1].pass);
    }

    #[test]
    fn uniform_denominator_schedule_passes_too() {
        let s = EpsSchedule::uniform_denominator(rat(1, 4), 16, 12).unwrap();
        assert!(s.check_inequality(12).iter().all(|r| r.pass));
    }

    #[test]
    fn min_level_selection() {
        let s = EpsSchedule::new(rat(1, 4), 4).unwrap();
        // eps(0) = 1/80
        assert_eq!(s.min_level_within(&rat(1, 16)), 0);
        assert_eq!(s.min_level_within(&rat(1, 100)), 1);
    }

    #[test]
    fn exact_provider_matches_random_walk() {
        let p = Arc::new(gen_regular(8, 3, 1).unwrap());
        let provider = BaseProvider::exact(p.clone());
        for (l, r) in bs_intervals(8) {
            for k in 0..=3 {
                let m = level_matrix(&provider, LevelKey::new(l, r, k)).unwrap();
                assert_eq!(m, p.rw_matrix(l, r).unwrap());
            }
        }
    }

    #[test]
    fn single_layer_base_for_all_levels() {
        let p = Arc::new(gen_regular(4, 2, 9).unwrap());
        let provider = BaseProvider::perturbed(p.clone(), rat(1, 10), PerturbMode::Inf, 3);
        for k in 0..4 {
            assert_eq!(
                level_matrix(&provider, LevelKey::new(2, 3, k)).unwrap(),
                p.layer_walk_matrix(3).unwrap()
            );
        }
    }

    #[test]
    fn two_layer_level_one_is_exact_product() {
        // With exact single-layer bases the k = 1 matrix on a length-2
        // interval collapses to the true product.
        let p = Arc::new(gen_regular(2, 3, 4).unwrap());
        let provider = BaseProvider::perturbed(p.clone(), rat(1, 8), PerturbMode::Inf, 1);
        let lvl1 = level_matrix(&provider, LevelKey::new(0, 2, 1)).unwrap();
        assert_eq!(lvl1, p.rw_matrix(0, 2).unwrap());
    }

    #[test]
    fn degenerate_interval_is_identity() {
        let p = Arc::new(gen_regular(4, 3, 2).unwrap());
        let provider = BaseProvider::exact(p);
        let m = level_matrix(&provider, LevelKey::new(2, 2, 5)).unwrap();
        assert_eq!(m, Matrix::identity(3));
    }

    #[test]
    fn non_bs_keys_are_rejected() {
        let p = Arc::new(gen_regular(8, 2, 1).unwrap());
        let provider = BaseProvider::exact(p);
        assert!(matches!(
            level_matrix(&provider, LevelKey::new(1, 6, 1)),
            Err(ApproxError::NotBinarySplit { .. })
        ));
    }

    #[test]
    fn row_sums_stay_one_and_cold_cache_agrees() {
        let p = Arc::new(gen_regular(8, 3, 7).unwrap());
        let a = BaseProvider::perturbed(p.clone(), rat(1, 50), PerturbMode::Inf, 5);
        let b = BaseProvider::perturbed(p.clone(), rat(1, 50), PerturbMode::Inf, 5);
        for (l, r) in bs_intervals(8) {
            for k in 0..=3 {
                let m = level_matrix(&a, LevelKey::new(l, r, k)).unwrap();
                assert!(m.row_sums().entries().iter().all(|s| s.is_one()));
                assert!(m.col_sums().entries().iter().all(|s| s.is_one()));
                assert_eq!(m, level_matrix(&b, LevelKey::new(l, r, k)).unwrap());
            }
        }
    }

    #[test]
    fn perturbed_inf_provider_respects_budget() {
        let p = Arc::new(gen_regular(8, 3, 3).unwrap());
        let delta = rat(1, 100);
        let provider = BaseProvider::perturbed(p.clone(), delta.clone(), PerturbMode::Inf, 1);
        let mut saw_nonzero = false;
        for (l, r) in bs_intervals(8) {
            let err = provider.level0(l, r).unwrap().sub(&p.rw_matrix(l, r).unwrap()).unwrap();
            assert!(err.inf_norm() <= delta);
            if r - l > 1 && !err.is_zero() {
                saw_nonzero = true;
            }
        }
        assert!(saw_nonzero, "perturbation collapsed to zero everywhere");
    }

    #[test]
    fn perturbed_zero_budget_and_width_one_are_exact() {
        let p = Arc::new(gen_regular(4, 3, 3).unwrap());
        let provider = BaseProvider::perturbed(p.clone(), Rat::zero(), PerturbMode::Inf, 1);
        assert_eq!(provider.level0(0, 4).unwrap(), p.rw_matrix(0, 4).unwrap());
        let w1 = Arc::new(gen_regular(4, 1, 0).unwrap());
        let provider = BaseProvider::perturbed(w1.clone(), rat(1, 2), PerturbMode::Weight, 1);
        assert_eq!(provider.level0(0, 4).unwrap(), w1.rw_matrix(0, 4).unwrap());
    }

    #[test]
    fn identity_residual_vanishes_for_perturbed_bases() {
        for (n, w, seed) in [(8usize, 3usize, 11u64), (4, 2, 5)] {
            let p = Arc::new(gen_regular(n, w, seed).unwrap());
            let provider = BaseProvider::perturbed(p, rat(1, 20), PerturbMode::Inf, seed);
            for (l, r) in bs_intervals(n) {
                if r - l <= 1 {
                    continue;
                }
                for k in 1..=3 {
                    let res =
                        delta_identity_residual(&provider, LevelKey::new(l, r, k)).unwrap();
                    assert!(res.is_zero(), "nonzero residual at ({l},{r}) level {k}");
                }
            }
        }
    }

    #[test]
    fn rounded_provider_keeps_marginals() {
        let p = Arc::new(gen_regular(8, 4, 13).unwrap());
        let provider = BaseProvider::rounded(p.clone(), 10);
        for (l, r) in bs_intervals(8) {
            let m = provider.level0(l, r).unwrap();
            assert!(m.row_sums().entries().iter().all(|s| s.is_one()));
            assert!(m.col_sums().entries().iter().all(|s| s.is_one()));
        }
    }

    #[test]
    fn cache_reporting() {
        let p = Arc::new(gen_regular(8, 2, 1).unwrap());
        let provider = BaseProvider::exact(p);
        let _ = level_matrix(&provider, LevelKey::new(0, 8, 2)).unwrap();
        let (base, levels) = provider.cache_sizes();
        assert!(base > 0);
        assert!(levels > 0);
    }

    #[test]
    fn grid_rounding_is_exactly_on_grid() {
        let m = Matrix::new(1, 2, vec![rat(1, 3), rat(2, 3)]).unwrap();
        let r = round_to_grid(&m, 4);
        assert_eq!(r.get(0, 0), &rat(5, 16));
        assert_eq!(r.get(0, 1), &rat(11, 16));
        assert_eq!(rat_int(0), round_to_grid(&Matrix::zeros(1, 1), 8).get(0, 0).clone());
    }
}
