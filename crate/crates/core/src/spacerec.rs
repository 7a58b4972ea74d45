//! The generalized recursion beyond binary-splitting intervals, and the
//! machinery built on it.
//!
//! The split point of an arbitrary interval is the unique multiple of the
//! largest power of two lying strictly inside it; on binary-splitting
//! intervals that is just the midpoint, so the generalized level matrices
//! agree with the basic recursion there. On top of this sit:
//!
//! * the base factorization of any interval into at most 2 log2(n)
//!   binary-splitting factors;
//! * the h-split identity, which rewrites a level-k matrix as O(n) products
//!   of levels at most max(h-1, k-h) and therefore reaches level 0 in
//!   logarithmically many splits; this is the space-efficient evaluation
//!   order, accounted for here by a deterministic ledger instead of a
//!   machine model;
//! * the block inverse-Laplacian view, whose preconditioned Richardson
//!   iterates coincide block-by-block with the generalized level matrices;
//! * the expectation estimator that picks its level from the error schedule,
//!   certifies a rounded base provider, and evaluates through the h-split.

use num::Signed;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

use crate::approx::{bs_intervals, in_bs, BaseProvider, EpsSchedule};
use crate::ratlin::{rat, rat_int, rat_to_f64, LinAlgError, Matrix};
use crate::robp::{RegularRobp, RobpError};
use crate::svapprox::{sv_error, SvError};
use crate::{Rat, RatMatrix};

/// Dense block algebra cap for the Richardson check.
pub const RICHARDSON_LENGTH_CAP: usize = 32;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("interval ({l},{r}) is empty or reversed")]
    BadInterval { l: usize, r: usize },
    #[error("({l},{r}) contains no interior split point")]
    NoInteriorPoint { l: usize, r: usize },
    #[error("split index h={h} out of range 1..={k}")]
    BadSplit { h: u32, k: u32 },
    #[error("length {n} exceeds the dense block cap {cap}")]
    TooLong { n: usize, cap: usize },
    #[error("epsilon must be positive")]
    BadEps,
    #[error(
        "rounded base certification failed at ({l},{r}) even at the finest grid: \
         measured {measured}, required {required}"
    )]
    BaseCertification { l: usize, r: usize, measured: f64, required: f64 },
    #[error(transparent)]
    Robp(#[from] RobpError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("{0}")]
    Approx(String),
    #[error("sv certification failed: {0}")]
    Sv(String),
}

impl From<crate::approx::ApproxError> for SpaceError {
    fn from(e: crate::approx::ApproxError) -> Self {
        SpaceError::Approx(e.to_string())
    }
}

impl From<SvError> for SpaceError {
    fn from(e: SvError) -> Self {
        SpaceError::Sv(e.to_string())
    }
}

/// The unique multiple of the largest power of two strictly inside (l, r).
/// Equals the midpoint on binary-splitting intervals of length > 1.
pub fn lca(l: usize, r: usize) -> Result<usize, SpaceError> {
    if l >= r {
        return Err(SpaceError::BadInterval { l, r });
    }
    for t in (0..usize::BITS - 1).rev() {
        let step = 1usize << t;
        let first = (l / step + 1).checked_mul(step);
        if let Some(first) = first {
            if first < r {
                return Ok(first);
            }
        }
    }
    Err(SpaceError::NoInteriorPoint { l, r })
}

/// Literal definition scan: tries each exponent from the top and collects
/// the multiples strictly inside the interval, asserting uniqueness. Slower
/// than `lca` but independent of it; kept public for the verification suite.
pub fn lca_definition_scan(l: usize, r: usize, n: usize) -> Result<usize, SpaceError> {
    if l >= r {
        return Err(SpaceError::BadInterval { l, r });
    }
    let mut t = 0;
    while (1usize << (t + 1)) <= n {
        t += 1;
    }
    loop {
        let step = 1usize << t;
        let multiples: Vec<usize> =
            (l + 1..r).filter(|m| m % step == 0).collect();
        if !multiples.is_empty() {
            assert_eq!(multiples.len(), 1, "interior multiple of 2^{t} is not unique");
            return Ok(multiples[0]);
        }
        if t == 0 {
            return Err(SpaceError::NoInteriorPoint { l, r });
        }
        t -= 1;
    }
}

/// Ordered gapless cover of (l, r) by binary-splitting intervals, at most
/// 2 log2(n) of them: descend by split points on the left side, ascend on
/// the right.
pub fn base_factorization(l: usize, r: usize, n: usize) -> Result<Vec<(usize, usize)>, SpaceError> {
    if l >= r || r > n {
        return Err(SpaceError::BadInterval { l, r });
    }
    if in_bs(l, r, n) {
        return Ok(vec![(l, r)]);
    }
    let m = lca(l, r)?;
    let mut left = Vec::new();
    let mut cursor = m;
    while !in_bs(l, cursor, n) {
        let inner = lca(l, cursor)?;
        left.push((inner, cursor));
        cursor = inner;
    }
    left.push((l, cursor));
    left.reverse();
    let mut out = left;
    let mut cursor = m;
    while !in_bs(cursor, r, n) {
        let inner = lca(cursor, r)?;
        out.push((cursor, inner));
        cursor = inner;
    }
    out.push((cursor, r));
    Ok(out)
}

/// Generalized level matrices for arbitrary intervals, memoized. Agrees
/// with the basic recursion on binary-splitting keys; elsewhere the split
/// point comes from `lca` and the level-0 case multiplies through it.
pub struct GeneralLevels<'a> {
    provider: &'a BaseProvider,
    memo: Mutex<HashMap<(usize, usize, u32), RatMatrix>>,
}

impl<'a> GeneralLevels<'a> {
    pub fn new(provider: &'a BaseProvider) -> Self {
        Self { provider, memo: Mutex::new(HashMap::new()) }
    }

    pub fn provider(&self) -> &BaseProvider {
        self.provider
    }

    pub fn matrix(&self, l: usize, r: usize, k: u32) -> Result<RatMatrix, SpaceError> {
        let program = self.provider.program();
        let n = program.n();
        if l > r || r > n {
            return Err(SpaceError::BadInterval { l, r });
        }
        if l == r {
            return Ok(Matrix::identity(program.w()));
        }
        if r - l == 1 {
            return Ok(program.layer_walk_matrix(r)?);
        }
        if k == 0 && in_bs(l, r, n) {
            return Ok(self.provider.level0(l, r)?);
        }
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&(l, r, k)) {
            return Ok(hit.clone());
        }
        let m = lca(l, r)?;
        let result = if k == 0 {
            self.matrix(l, m, 0)?.mat_mul(&self.matrix(m, r, 0)?)?
        } else {
            let w = program.w();
            let mut acc: RatMatrix = Matrix::zeros(w, w);
            for i in 0..=k {
                let left = self.matrix(l, m, i)?;
                let right = self.matrix(m, r, k - i)?;
                acc = acc.add(&left.mat_mul(&right)?)?;
            }
            for i in 0..k {
                let left = self.matrix(l, m, i)?;
                let right = self.matrix(m, r, k - 1 - i)?;
                acc = acc.sub(&left.mat_mul(&right)?)?;
            }
            acc
        };
        self.memo.lock().expect("memo lock").insert((l, r, k), result.clone());
        Ok(result)
    }
}

/// Space-proxy accounting for one h-split evaluation: recursion depth above
/// the level-0 layer, the peak number of simultaneously held width-sized
/// matrices, and the number of level-0 fetches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SpaceLedger {
    #[serde(rename = "depth")]
    pub max_recursion_depth: u32,
    #[serde(rename = "live_peak")]
    pub max_live_matrices: u32,
    pub base_calls: u64,
}

struct HSplitEval<'a> {
    provider: &'a BaseProvider,
    ledger: SpaceLedger,
    depth: u32,
    live: u32,
}

impl HSplitEval<'_> {
    fn hold(&mut self, count: u32) {
        self.live += count;
        self.ledger.max_live_matrices = self.ledger.max_live_matrices.max(self.live);
    }

    fn drop_held(&mut self, count: u32) {
        self.live -= count;
    }

    fn base_product(&mut self, l: usize, r: usize) -> Result<RatMatrix, SpaceError> {
        let program = self.provider.program();
        if l == r {
            self.hold(1);
            return Ok(Matrix::identity(program.w()));
        }
        let factors = base_factorization(l, r, program.n())?;
        self.ledger.base_calls += factors.len() as u64;
        let mut acc = self.provider.level0(factors[0].0, factors[0].1)?;
        self.hold(1);
        for &(fl, fr) in &factors[1..] {
            let next = self.provider.level0(fl, fr)?;
            self.hold(1);
            acc = acc.mat_mul(&next)?;
            self.drop_held(1);
        }
        Ok(acc)
    }

    fn eval(&mut self, l: usize, r: usize, k: u32, h_top: Option<u32>) -> Result<RatMatrix, SpaceError> {
        let program = self.provider.program();
        if l == r {
            self.hold(1);
            return Ok(Matrix::identity(program.w()));
        }
        if k == 0 {
            return self.base_product(l, r);
        }
        if r - l == 1 {
            self.ledger.base_calls += 1;
            self.hold(1);
            return Ok(program.layer_walk_matrix(r)?);
        }
        let h = h_top.unwrap_or(k.div_ceil(2));
        self.depth += 1;
        self.ledger.max_recursion_depth = self.ledger.max_recursion_depth.max(self.depth);
        let w = program.w();
        let mut acc: RatMatrix = Matrix::zeros(w, w);
        self.hold(1);
        for s in (l + 1)..=r {
            let left = self.eval(l, s - 1, h - 1, None)?;
            let mid = program.layer_walk_matrix(s)?;
            self.hold(1);
            let right = self.eval(s, r, k - h, None)?;
            let term = left.mat_mul(&mid)?.mat_mul(&right)?;
            self.hold(1);
            acc = acc.add(&term)?;
            self.drop_held(4);
        }
        for s in (l + 1)..r {
            let left = self.eval(l, s, h - 1, None)?;
            let right = self.eval(s, r, k - h, None)?;
            let term = left.mat_mul(&right)?;
            self.hold(1);
            acc = acc.sub(&term)?;
            self.drop_held(3);
        }
        self.depth -= 1;
        Ok(acc)
    }
}

/// Evaluates the level-k matrix through the h-split identity
///
/// ```text
///   sum_{s=l+1}^{r} M^(h-1)[l..s-1] M_s M^(k-h)[s..r]
///     - sum_{s=l+1}^{r-1} M^(h-1)[l..s] M^(k-h)[s..r]
/// ```
///
/// with sub-terms evaluated recursively at the default split ceil(k/2) and
/// no memoization; this is the evaluation order whose depth and ledger
/// model the space-efficient algorithm.
pub fn newrec_matrix(
    provider: &BaseProvider,
    l: usize,
    r: usize,
    k: u32,
    h: u32,
) -> Result<(RatMatrix, SpaceLedger), SpaceError> {
    if l >= r {
        return Err(SpaceError::BadInterval { l, r });
    }
    if h == 0 || h > k {
        return Err(SpaceError::BadSplit { h, k });
    }
    let mut eval = HSplitEval { provider, ledger: SpaceLedger::default(), depth: 0, live: 0 };
    let m = eval.eval(l, r, k, Some(h))?;
    Ok((m, eval.ledger))
}

/// Recursion depth the h-split evaluation plan reaches above the level-0
/// layer, as a pure function of (k, top-level h).
pub fn newrec_plan_depth(k: u32, h_top: Option<u32>) -> u32 {
    if k == 0 {
        return 0;
    }
    let h = h_top.unwrap_or(k.div_ceil(2));
    1 + newrec_plan_depth(h - 1, None).max(newrec_plan_depth(k - h, None))
}

/// Bulk verifier for the h-split identity: sub-terms come from a shared
/// memoized level source, so sweeping every (interval, level, split) stays
/// cheap. Values are identical to `newrec_matrix`; only the evaluation
/// strategy differs.
pub struct NewrecEngine<'a> {
    levels: GeneralLevels<'a>,
}

impl<'a> NewrecEngine<'a> {
    pub fn new(provider: &'a BaseProvider) -> Self {
        Self { levels: GeneralLevels::new(provider) }
    }

    pub fn matrix(&self, l: usize, r: usize, k: u32, h: u32) -> Result<RatMatrix, SpaceError> {
        if l >= r {
            return Err(SpaceError::BadInterval { l, r });
        }
        if h == 0 || h > k {
            return Err(SpaceError::BadSplit { h, k });
        }
        let program = self.levels.provider().program();
        if r - l == 1 {
            return Ok(program.layer_walk_matrix(r)?);
        }
        let w = program.w();
        let mut acc: RatMatrix = Matrix::zeros(w, w);
        for s in (l + 1)..=r {
            let left = self.levels.matrix(l, s - 1, h - 1)?;
            let mid = program.layer_walk_matrix(s)?;
            let right = self.levels.matrix(s, r, k - h)?;
            acc = acc.add(&left.mat_mul(&mid)?.mat_mul(&right)?)?;
        }
        for s in (l + 1)..r {
            let left = self.levels.matrix(l, s, h - 1)?;
            let right = self.levels.matrix(s, r, k - h)?;
            acc = acc.sub(&left.mat_mul(&right)?)?;
        }
        Ok(acc)
    }

    pub fn levels(&self) -> &GeneralLevels<'a> {
        &self.levels
    }
}

/// Dense square matrix of w-by-w blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMatrix {
    nb: usize,
    w: usize,
    blocks: Vec<RatMatrix>,
}

impl BlockMatrix {
    pub fn zeros(nb: usize, w: usize) -> Self {
        Self { nb, w, blocks: vec![Matrix::zeros(w, w); nb * nb] }
    }

    pub fn identity(nb: usize, w: usize) -> Self {
        let mut m = Self::zeros(nb, w);
        for i in 0..nb {
            *m.block_mut(i, i) = Matrix::identity(w);
        }
        m
    }

    pub fn block(&self, i: usize, j: usize) -> &RatMatrix {
        &self.blocks[i * self.nb + j]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut RatMatrix {
        &mut self.blocks[i * self.nb + j]
    }

    pub fn mul(&self, other: &Self) -> Result<Self, SpaceError> {
        assert_eq!(self.nb, other.nb);
        let mut out = Self::zeros(self.nb, self.w);
        for i in 0..self.nb {
            for t in 0..self.nb {
                if self.block(i, t).is_zero() {
                    continue;
                }
                for j in 0..self.nb {
                    if other.block(t, j).is_zero() {
                        continue;
                    }
                    let prod = self.block(i, t).mat_mul(other.block(t, j))?;
                    *out.block_mut(i, j) = out.block(i, j).add(&prod)?;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, SpaceError> {
        let mut out = Self::zeros(self.nb, self.w);
        for i in 0..self.nb {
            for j in 0..self.nb {
                *out.block_mut(i, j) = self.block(i, j).add(other.block(i, j))?;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpaceError> {
        let mut out = Self::zeros(self.nb, self.w);
        for i in 0..self.nb {
            for j in 0..self.nb {
                *out.block_mut(i, j) = self.block(i, j).sub(other.block(i, j))?;
            }
        }
        Ok(out)
    }
}

/// Outcome of the inverse-Laplacian equivalence check.
#[derive(Debug, Clone, Serialize)]
pub struct RichardsonReport {
    pub n: usize,
    pub k_max: u32,
    /// L X = I with X[i][j] = M_{i..j}: the inverse-Laplacian identity.
    pub inverse_laplacian_ok: bool,
    /// (I - L Ltilde^{-1})[i][j] = M_{i+1} M0_{i+1..j} - M0_{i..j} above the
    /// diagonal and zero elsewhere.
    pub local_consistency_ok: bool,
    /// Per level k: Richardson iterate blocks equal the generalized level
    /// matrices on every (l <= r).
    pub per_level_ok: Vec<bool>,
    pub all_ok: bool,
}

/// Builds the block Laplacian L = I - W (W upper-bidiagonal in the layer
/// walk matrices), the approximate inverse with blocks M0_{i..j}, and runs
/// the preconditioned Richardson recursion, asserting block-wise equality
/// with the generalized level matrices at every level up to `k_max`.
pub fn richardson_check(provider: &BaseProvider, k_max: u32) -> Result<RichardsonReport, SpaceError> {
    let program = provider.program();
    let n = program.n();
    if n > RICHARDSON_LENGTH_CAP {
        return Err(SpaceError::TooLong { n, cap: RICHARDSON_LENGTH_CAP });
    }
    let w = program.w();
    let nb = n + 1;
    let levels = GeneralLevels::new(provider);

    let mut walk_blocks = BlockMatrix::zeros(nb, w);
    for i in 1..=n {
        *walk_blocks.block_mut(i - 1, i) = program.layer_walk_matrix(i)?;
    }
    let laplacian = BlockMatrix::identity(nb, w).sub(&walk_blocks)?;

    // Exact inverse: block (i, j) of L^{-1} is the walk matrix M_{i..j}.
    let mut exact_inverse = BlockMatrix::zeros(nb, w);
    for i in 0..nb {
        for j in i..nb {
            *exact_inverse.block_mut(i, j) = program.rw_matrix(i, j)?;
        }
    }
    let inverse_laplacian_ok =
        laplacian.mul(&exact_inverse)? == BlockMatrix::identity(nb, w);

    // Mild approximate inverse from the generalized level-0 matrices.
    let mut approx_inverse = BlockMatrix::zeros(nb, w);
    for i in 0..nb {
        for j in i..nb {
            *approx_inverse.block_mut(i, j) = levels.matrix(i, j, 0)?;
        }
    }

    let residual = BlockMatrix::identity(nb, w).sub(&laplacian.mul(&approx_inverse)?)?;
    let mut local_consistency_ok = true;
    for i in 0..nb {
        for j in 0..nb {
            let expected = if i < j {
                let stepped = program
                    .layer_walk_matrix(i + 1)?
                    .mat_mul(&levels.matrix(i + 1, j, 0)?)?;
                stepped.sub(&levels.matrix(i, j, 0)?)?
            } else {
                Matrix::zeros(w, w)
            };
            if residual.block(i, j) != &expected {
                local_consistency_ok = false;
            }
        }
    }

    let mut per_level_ok = Vec::new();
    let mut iterate = approx_inverse.clone();
    for k in 0..=k_max {
        if k > 0 {
            iterate = approx_inverse.add(&iterate.mul(&residual)?)?;
        }
        let mut ok = true;
        for l in 0..nb {
            for r in l..nb {
                if iterate.block(l, r) != &levels.matrix(l, r, k)? {
                    ok = false;
                }
            }
            for r in 0..l {
                if !iterate.block(l, r).is_zero() {
                    ok = false;
                }
            }
        }
        per_level_ok.push(ok);
    }

    let all_ok = inverse_laplacian_ok && local_consistency_ok && per_level_ok.iter().all(|&b| b);
    Ok(RichardsonReport { n, k_max, inverse_laplacian_ok, local_consistency_ok, per_level_ok, all_ok })
}

/// Result of the white-box expectation estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    #[serde(with = "crate::ratlin::rat_serde")]
    pub value: Rat,
    pub level: u32,
    pub grid_log2: u32,
    /// Worst measured base certificate across binary-splitting intervals.
    pub base_cert_max: f64,
    pub ledger: SpaceLedger,
}

/// Grids tried for the rounded base provider, coarse to fine.
const ESTIMATE_GRIDS: [u32; 7] = [10, 14, 18, 22, 26, 30, 36];
const ESTIMATE_TOL: f64 = 1e-9;

/// Deterministic expectation estimate within eps of the true acceptance
/// probability: picks the minimal level whose budget squared stays within
/// eps^2 / w (the exact form of eps / sqrt(w)), certifies a rounded base
/// provider against eps(0)/3 in the SV measure, and evaluates the top-level
/// matrix through the h-split at h = ceil(k/2).
pub fn estimate_expectation(
    program: &std::sync::Arc<RegularRobp>,
    eps: &Rat,
) -> Result<EstimateReport, SpaceError> {
    if !eps.is_positive() {
        return Err(SpaceError::BadEps);
    }
    let n = program.n();
    let log2n = n.trailing_zeros();
    // The schedule needs gamma strictly below 1/2; 1/log2(n) only qualifies
    // from length 8 upward.
    let gamma = if log2n >= 3 { rat(1, log2n as i64) } else { rat(1, 3) };
    let schedule = EpsSchedule::new(gamma, n).map_err(|e| SpaceError::Approx(e.to_string()))?;
    let w_rat = rat_int(program.w() as i64);
    let eps_sq = eps.clone() * eps.clone();
    let mut k = 0u32;
    while schedule.eps(k).clone() * schedule.eps(k) * w_rat.clone() > eps_sq {
        k += 1;
    }

    let budget = rat_to_f64(&(schedule.eps(0) / rat_int(3)));
    let mut chosen: Option<(BaseProvider, u32, f64)> = None;
    let mut last_failure = (0usize, 0usize, f64::INFINITY);
    for grid in ESTIMATE_GRIDS {
        let provider = BaseProvider::rounded(program.clone(), grid);
        let mut worst = 0.0f64;
        let mut ok = true;
        for (l, r) in bs_intervals(n) {
            let cert = sv_error(&program.rw_matrix(l, r)?, &provider.level0(l, r)?, ESTIMATE_TOL)?;
            if !cert.kernel_ok || cert.eps_measured > budget + ESTIMATE_TOL {
                ok = false;
                last_failure = (l, r, cert.eps_measured);
                break;
            }
            worst = worst.max(cert.eps_measured);
        }
        if ok {
            chosen = Some((provider, grid, worst));
            break;
        }
    }
    let Some((provider, grid_log2, base_cert_max)) = chosen else {
        return Err(SpaceError::BaseCertification {
            l: last_failure.0,
            r: last_failure.1,
            measured: last_failure.2,
            required: budget,
        });
    };

    let (top, ledger) = if k == 0 {
        let mut eval =
            HSplitEval { provider: &provider, ledger: SpaceLedger::default(), depth: 0, live: 0 };
        let m = eval.base_product(0, n)?;
        (m, eval.ledger)
    } else {
        newrec_matrix(&provider, 0, n, k, k.div_ceil(2))?
    };
    let (st, ed) = program.start_accept_vectors();
    let value = st.dot(&top.mat_vec(&ed)?)?;
    Ok(EstimateReport { value, level: k, grid_log2, base_cert_max, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{level_matrix, LevelKey, PerturbMode};
    use num::{One, Zero};
    use crate::robp::gen_regular;
    use std::sync::Arc;

    #[test]
    fn lca_cases() {
        assert_eq!(lca(0, 8).unwrap(), 4);
        assert_eq!(lca(1, 6).unwrap(), 4);
        assert_eq!(lca(2, 4).unwrap(), 3);
        assert!(matches!(lca(3, 3), Err(SpaceError::BadInterval { .. })));
        assert!(matches!(lca(3, 4), Err(SpaceError::NoInteriorPoint { .. })));
    }

    #[test]
    fn lca_agrees_with_definition_scan() {
        let n = 64;
        for l in 0..n {
            for r in (l + 2)..=n {
                assert_eq!(
                    lca(l, r).unwrap(),
                    lca_definition_scan(l, r, n).unwrap(),
                    "disagreement at ({l},{r})"
                );
            }
        }
        // Midpoint shortcut on binary-splitting intervals.
        for (l, r) in bs_intervals(64) {
            if r - l > 1 {
                assert_eq!(lca(l, r).unwrap(), (l + r) / 2);
            }
        }
    }

    #[test]
    fn factorization_cases() {
        assert_eq!(base_factorization(1, 6, 8).unwrap(), vec![(1, 2), (2, 4), (4, 6)]);
        assert_eq!(base_factorization(0, 8, 8).unwrap(), vec![(0, 8)]);
        assert_eq!(base_factorization(5, 6, 8).unwrap(), vec![(5, 6)]);
    }

    #[test]
    fn factorization_exhaustive_properties() {
        for n in [8usize, 16, 64] {
            let bound = 2 * n.trailing_zeros() as usize;
            for l in 0..n {
                for r in (l + 1)..=n {
                    let factors = base_factorization(l, r, n).unwrap();
                    assert!(factors.len() <= bound, "({l},{r}) has {} factors", factors.len());
                    assert_eq!(factors[0].0, l);
                    assert_eq!(factors.last().unwrap().1, r);
                    for pair in factors.windows(2) {
                        assert_eq!(pair[0].1, pair[1].0, "gap in cover of ({l},{r})");
                    }
                    assert!(factors.iter().all(|&(a, b)| in_bs(a, b, n)));
                }
            }
        }
    }

    #[test]
    fn general_levels_agree_on_bs_keys() {
        let program = Arc::new(gen_regular(8, 3, 15).unwrap());
        let provider = BaseProvider::perturbed(program, rat(1, 30), PerturbMode::Inf, 4);
        let levels = GeneralLevels::new(&provider);
        for (l, r) in bs_intervals(8) {
            for k in 0..=3 {
                assert_eq!(
                    levels.matrix(l, r, k).unwrap(),
                    level_matrix(&provider, LevelKey::new(l, r, k)).unwrap()
                );
            }
        }
    }

    #[test]
    fn general_levels_degenerate_interval_is_identity() {
        let program = Arc::new(gen_regular(8, 3, 2).unwrap());
        let provider = BaseProvider::exact(program);
        let levels = GeneralLevels::new(&provider);
        for k in 0..4 {
            assert_eq!(levels.matrix(5, 5, k).unwrap(), Matrix::identity(3));
        }
    }

    #[test]
    fn general_level_zero_matches_factorization_product() {
        let program = Arc::new(gen_regular(8, 3, 5).unwrap());
        let provider = BaseProvider::perturbed(program.clone(), rat(1, 25), PerturbMode::Inf, 9);
        let levels = GeneralLevels::new(&provider);
        for (l, r) in [(1usize, 6usize), (3, 8), (1, 7), (2, 5)] {
            let mut product: RatMatrix = Matrix::identity(3);
            for (fl, fr) in base_factorization(l, r, 8).unwrap() {
                product = product.mat_mul(&provider.level0(fl, fr).unwrap()).unwrap();
            }
            assert_eq!(levels.matrix(l, r, 0).unwrap(), product);
        }
    }

    #[test]
    fn hsplit_base_case_is_the_layer_matrix() {
        let program = Arc::new(gen_regular(4, 3, 2).unwrap());
        let provider = BaseProvider::exact(program.clone());
        let (m, ledger) = newrec_matrix(&provider, 2, 3, 1, 1).unwrap();
        assert_eq!(m, program.layer_walk_matrix(3).unwrap());
        assert_eq!(ledger.max_recursion_depth, 0);
    }

    #[test]
    fn hsplit_equals_general_levels_for_every_split() {
        let program = Arc::new(gen_regular(8, 3, 23).unwrap());
        for provider in [
            BaseProvider::exact(program.clone()),
            BaseProvider::perturbed(program.clone(), rat(1, 40), PerturbMode::Inf, 6),
            BaseProvider::rounded(program.clone(), 10),
        ] {
            let levels = GeneralLevels::new(&provider);
            for k in 1..=3u32 {
                for h in 1..=k {
                    for (l, r) in [(0usize, 8usize), (1, 6), (2, 7), (0, 5)] {
                        let (m, ledger) = newrec_matrix(&provider, l, r, k, h).unwrap();
                        assert_eq!(
                            m,
                            levels.matrix(l, r, k).unwrap(),
                            "h-split mismatch at ({l},{r}) k={k} h={h}"
                        );
                        let bound = (k.max(1) as usize).next_power_of_two().trailing_zeros() + 1;
                        assert!(
                            ledger.max_recursion_depth <= bound,
                            "depth ledger over bound at k={k} h={h}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hsplit_engine_matches_honest_evaluator() {
        let program = Arc::new(gen_regular(8, 2, 31).unwrap());
        let provider = BaseProvider::perturbed(program, rat(1, 35), PerturbMode::Inf, 8);
        let engine = NewrecEngine::new(&provider);
        for (l, r) in [(0usize, 8usize), (1, 5), (3, 8)] {
            for k in 1..=3u32 {
                for h in 1..=k {
                    let (honest, _) = newrec_matrix(&provider, l, r, k, h).unwrap();
                    assert_eq!(honest, engine.matrix(l, r, k, h).unwrap());
                }
            }
        }
    }

    #[test]
    fn plan_depth_bound_up_to_64() {
        for k in 1..=64u32 {
            let depth = newrec_plan_depth(k, None);
            assert!(
                depth <= k.ilog2() + 1,
                "plan depth {depth} exceeds bound at k={k}"
            );
        }
        assert_eq!(newrec_plan_depth(0, None), 0);
        assert_eq!(newrec_plan_depth(1, None), 1);
    }

    #[test]
    fn invalid_split_rejected() {
        let program = Arc::new(gen_regular(4, 2, 1).unwrap());
        let provider = BaseProvider::exact(program);
        assert!(matches!(newrec_matrix(&provider, 0, 4, 2, 0), Err(SpaceError::BadSplit { .. })));
        assert!(matches!(newrec_matrix(&provider, 0, 4, 2, 3), Err(SpaceError::BadSplit { .. })));
    }

    #[test]
    fn richardson_equivalence_small() {
        let program = Arc::new(gen_regular(8, 2, 12).unwrap());
        for provider in [
            BaseProvider::exact(program.clone()),
            BaseProvider::perturbed(program.clone(), rat(1, 30), PerturbMode::Inf, 3),
            BaseProvider::rounded(program.clone(), 8),
        ] {
            let report = richardson_check(&provider, 3).unwrap();
            assert!(report.all_ok, "failed: {report:?}");
        }
    }

    #[test]
    fn richardson_rejects_oversized_programs() {
        let program = Arc::new(gen_regular(64, 2, 1).unwrap());
        let provider = BaseProvider::exact(program);
        assert!(matches!(richardson_check(&provider, 1), Err(SpaceError::TooLong { .. })));
    }

    #[test]
    fn estimate_trivial_and_constant_cases() {
        let program = Arc::new(gen_regular(8, 3, 3).unwrap());
        let report = estimate_expectation(&program, &rat_int(1)).unwrap();
        let truth = program.brute_expectation();
        assert!((report.value.clone() - truth).abs() <= rat_int(1));
        assert_eq!(report.level, 0);

        let all_accept: Vec<usize> = (0..3).collect();
        let constant = Arc::new(
            crate::robp::RegularRobp::new(
                3,
                gen_regular(8, 3, 4).unwrap().to_json().layers,
                0,
                &all_accept,
            )
            .unwrap(),
        );
        let report = estimate_expectation(&constant, &rat(1, 100)).unwrap();
        assert!(report.value.is_one());
    }

    #[test]
    fn estimate_meets_requested_error() {
        let program = Arc::new(gen_regular(8, 3, 17).unwrap());
        let truth = program.brute_expectation();
        let mut last_level = 0;
        for eps in [rat(1, 100), rat(1, 10000)] {
            let report = estimate_expectation(&program, &eps).unwrap();
            let err = (report.value.clone() - truth.clone()).abs();
            assert!(err <= eps, "estimate off by {err}");
            assert!(report.level >= last_level, "level must grow as eps shrinks");
            last_level = report.level;
        }
    }

    #[test]
    fn estimate_rejects_nonpositive_eps() {
        let program = Arc::new(gen_regular(4, 2, 1).unwrap());
        assert!(matches!(
            estimate_expectation(&program, &Rat::zero()),
            Err(SpaceError::BadEps)
        ));
    }
}
