//! The weighted PRG: expansion of level-k matrices into signed products of
//! level-0 blocks, a positional enumeration of the expansion, and the final
//! seeded construction
//!
//! ```text
//!   seed -> (enumeration index, expander-walk seed)
//!        -> signed sequence (i_0 < ... < i_h), expander-correlated symbols
//!        -> output = concat of base-generator prefixes, weight = sign * |S|
//! ```
//!
//! Exhaustive evaluation over the full seed space is exact rational; every
//! descriptor records the verified expander eigenvalues, the measured
//! per-term expander-product errors, and the measured base quality, so the
//! end-to-end error bound rests on per-instance certificates.

mod inw;

pub use inw::{
    default_lambda_threshold, CirculantExpander, G0Config, G0Generator, InwConfig, InwGenerator,
};

use num::{One, Signed, Zero};
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

use crate::approx::{
    bs_intervals, in_bs, ApproxError, BaseProvider, BitGenerator, EpsSchedule,
};
use crate::ratlin::{rat_int, LinAlgError, Matrix};
use crate::robp::{RegularRobp, RobpError};
use crate::{Rat, RatMatrix};

#[derive(Debug, Error)]
pub enum WprgError {
    #[error("epsilon must be positive")]
    BadEps,
    #[error("({l},{r}) is not a binary-splitting interval")]
    NotBinarySplit { l: usize, r: usize },
    #[error("seed space of {bits} bits exceeds the exhaustive cap")]
    SeedSpaceTooLarge { bits: u32 },
    #[error("enumeration width {bits} bits is beyond the supported range")]
    EnumTooWide { bits: usize },
    #[error("no expander met lambda <= {requested} (best over retries: {best})")]
    ExpanderThreshold { requested: f64, best: f64 },
    #[error(
        "expander-product error target {target} is infeasible for this configuration; \
         achievable: {achievable}"
    )]
    InwTargetMissed { target: String, achievable: String },
    #[error("base generator too weak ({context}): measured {measured}, required {required}")]
    BaseTooWeak { measured: String, required: String, context: &'static str },
    #[error(
        "alphabet 2^{symbol_bits} x {blocks} blocks exceeds the exact-expectation cap; \
         lower the symbol width or the block count"
    )]
    InwSizeCap { symbol_bits: u32, blocks: usize },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Robp(#[from] RobpError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
    #[error("weight measurement failed: {0}")]
    Weight(String),
}

/// One term of the expansion: an increasing index sequence from l to r with
/// a sign; sign 0 marks a dummy padding term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SignedSequence {
    pub indices: Vec<usize>,
    pub sign: i8,
}

impl SignedSequence {
    pub fn dummy(n: usize) -> Self {
        Self { indices: vec![0, n], sign: 0 }
    }

    pub fn is_dummy(&self) -> bool {
        self.sign == 0
    }

    /// Number of factors (consecutive index pairs).
    pub fn len(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn expand_rec(
    l: usize,
    r: usize,
    k: u32,
    memo: &mut HashMap<(usize, usize, u32), Vec<SignedSequence>>,
) -> Vec<SignedSequence> {
    if r - l == 1 || k == 0 {
        return vec![SignedSequence { indices: vec![l, r], sign: 1 }];
    }
    if let Some(hit) = memo.get(&(l, r, k)) {
        return hit.clone();
    }
    let m = (l + r) / 2;
    let mut out = Vec::new();
    for b in 0..=1u32 {
        let Some(budget) = k.checked_sub(b) else { break };
        for i in 0..=budget {
            let left = expand_rec(l, m, i, memo);
            let right = expand_rec(m, r, budget - i, memo);
            for sl in &left {
                for sr in &right {
                    let mut indices = sl.indices.clone();
                    indices.extend_from_slice(&sr.indices[1..]);
                    let sign = sl.sign * sr.sign * if b == 1 { -1 } else { 1 };
                    out.push(SignedSequence { indices, sign });
                }
            }
        }
    }
    memo.insert((l, r, k), out.clone());
    out
}

/// The signed multiset S with sum_{(sq,sigma) in S} sigma * M0_sq equal to
/// the level-k matrix on (l, r). Built by the midpoint unfolding, so the
/// size stays within (r-l)^(2k) and every sequence has at most
/// k*log2(r-l) + 1 factors.
pub fn expand(l: usize, r: usize, k: u32, n: usize) -> Result<Vec<SignedSequence>, WprgError> {
    if !in_bs(l, r, n) {
        return Err(WprgError::NotBinarySplit { l, r });
    }
    let mut memo = HashMap::new();
    Ok(expand_rec(l, r, k, &mut memo))
}

/// Product of level-0 matrices along the sequence.
pub fn seq_matrix(p: &BaseProvider, seq: &SignedSequence) -> Result<RatMatrix, WprgError> {
    let mut acc: RatMatrix = Matrix::identity(p.program().w());
    for win in seq.indices.windows(2) {
        acc = acc.mat_mul(&p.level0(win[0], win[1])?)?;
    }
    Ok(acc)
}

/// The signed sum of sequence products; used to cross-check the expansion
/// against the recursion.
pub fn expand_signed_sum(
    p: &BaseProvider,
    l: usize,
    r: usize,
    k: u32,
) -> Result<RatMatrix, WprgError> {
    let w = p.program().w();
    let mut acc: RatMatrix = Matrix::zeros(w, w);
    for seq in expand(l, r, k, p.program().n())? {
        let m = seq_matrix(p, &seq)?;
        acc = if seq.sign >= 0 { acc.add(&m)? } else { acc.sub(&m)? };
    }
    Ok(acc)
}

fn ceil_log2(x: usize) -> usize {
    x.next_power_of_two().trailing_zeros() as usize
}

/// Width of the enumeration index in bits: 2 k log2(n).
pub fn enum_bits_width(n: usize, k: u32) -> usize {
    2 * k as usize * n.trailing_zeros() as usize
}

fn walk_enum(
    l: usize,
    r: usize,
    k: u32,
    bits: &[bool],
    cursor: &mut usize,
) -> Option<(Vec<usize>, i8)> {
    if r - l == 1 || k == 0 {
        return Some((vec![l, r], 1));
    }
    let width = ceil_log2(2 * k as usize + 1);
    let mut choice = 0u32;
    for t in 0..width {
        if bits.get(*cursor + t).copied().unwrap_or(false) {
            choice |= 1 << t;
        }
    }
    *cursor += width;
    if choice > 2 * k {
        return None;
    }
    let (negate, i, j) = if choice <= k {
        (false, choice, k - choice)
    } else {
        let i = choice - k - 1;
        (true, i, k - 1 - i)
    };
    let m = (l + r) / 2;
    let (mut indices, ls) = walk_enum(l, m, i, bits, cursor)?;
    let (right, rs) = walk_enum(m, r, j, bits, cursor)?;
    indices.extend_from_slice(&right[1..]);
    Some((indices, ls * rs * if negate { -1 } else { 1 }))
}

/// Positional enumeration of the top-level expansion: at every split node a
/// fixed-width chunk picks one term of the recursion, out-of-range chunks
/// and nonzero trailing bits yield the dummy term, so the nonzero outputs
/// hit the expansion exactly once each.
pub fn enum_term(n: usize, k: u32, index_bits: &[bool]) -> SignedSequence {
    debug_assert_eq!(index_bits.len(), enum_bits_width(n, k));
    let mut cursor = 0;
    match walk_enum(0, n, k, index_bits, &mut cursor) {
        None => SignedSequence::dummy(n),
        Some((indices, sign)) => {
            if index_bits[cursor..].iter().any(|&b| b) {
                SignedSequence::dummy(n)
            } else {
                SignedSequence { indices, sign }
            }
        }
    }
}

/// Caps for the exact expander-product expectation.
const INW_ERROR_SYMBOL_BITS_CAP: u32 = 12;
const INW_ERROR_BLOCK_CAP: usize = 8;
const INW_ERROR_SEED_BITS_CAP: u32 = 24;

/// Exact inf-norm distance between the seed-averaged product of
/// matrix-valued blocks driven by the generator and the product of the
/// per-block symbol averages. Both sides are exact rational expectations;
/// sizes are capped because the seed space is enumerated in full.
pub fn inw_matrix_error(
    generator: &InwGenerator,
    block: &dyn Fn(usize, u64) -> RatMatrix,
) -> Result<Rat, WprgError> {
    let h = generator.block_count();
    let sym_bits = generator.symbol_bits();
    if sym_bits > INW_ERROR_SYMBOL_BITS_CAP || h > INW_ERROR_BLOCK_CAP {
        return Err(WprgError::InwSizeCap { symbol_bits: sym_bits, blocks: h });
    }
    if generator.seed_bits() > INW_ERROR_SEED_BITS_CAP {
        return Err(WprgError::SeedSpaceTooLarge { bits: generator.seed_bits() });
    }
    let symbols = 1u64 << sym_bits;
    let values: Vec<Vec<RatMatrix>> = (0..h)
        .map(|j| (0..symbols).map(|s| block(j, s)).collect())
        .collect();
    let w = values[0][0].rows();

    let mut rhs: RatMatrix = Matrix::identity(w);
    let sym_count = rat_int(symbols as i64);
    for per_block in &values {
        let mut avg: RatMatrix = Matrix::zeros(w, w);
        for m in per_block {
            avg = avg.add(m)?;
        }
        rhs = rhs.mat_mul(&avg.scale(&(Rat::one() / sym_count.clone())))?;
    }

    let seeds = 1u64 << generator.seed_bits();
    let mut lhs: RatMatrix = Matrix::zeros(w, w);
    for seed in 0..seeds {
        let syms = generator.sample(seed);
        let mut prod = values[0][syms[0] as usize].clone();
        for j in 1..h {
            prod = prod.mat_mul(&values[j][syms[j] as usize])?;
        }
        lhs = lhs.add(&prod)?;
    }
    let lhs = lhs.scale(&(Rat::one() / rat_int(seeds as i64)));
    Ok(lhs.sub(&rhs)?.inf_norm())
}

/// Exact per-sequence expander-product error for walk-matrix blocks, using
/// state-map composition instead of matrix products.
fn per_term_walk_error(
    program: &RegularRobp,
    provider: &BaseProvider,
    g_inw: &InwGenerator,
    g0: &G0Generator,
    seq: &SignedSequence,
) -> Result<Rat, WprgError> {
    if g_inw.seed_bits() > INW_ERROR_SEED_BITS_CAP {
        return Err(WprgError::SeedSpaceTooLarge { bits: g_inw.seed_bits() });
    }
    let w = program.w();
    let seeds = 1u64 << g_inw.seed_bits();
    let mut counts = vec![0u64; w * w];
    for seed in 0..seeds {
        let syms = g_inw.sample(seed);
        let mut state: Vec<usize> = (0..w).collect();
        for (j, win) in seq.indices.windows(2).enumerate() {
            let len = win[1] - win[0];
            let bits = g0.bits(syms[j], len);
            let map = program.walk_map(win[0], win[1], &bits)?;
            for s in state.iter_mut() {
                *s = map[*s];
            }
        }
        for (u, &v) in state.iter().enumerate() {
            counts[u * w + v] += 1;
        }
    }
    let total = rat_int(seeds as i64);
    let lhs = Matrix::from_fn(w, w, |i, j| {
        Rat::from_integer(counts[i * w + j].into()) / total.clone()
    });
    let rhs = seq_matrix(provider, seq)?;
    Ok(lhs.sub(&rhs)?.inf_norm())
}

/// Knobs for the expander stack of the final construction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WprgBuildParams {
    pub degree_bits: u32,
    /// None selects the size-adaptive default threshold per level.
    pub lambda_threshold: Option<f64>,
    pub graph_seed: u64,
}

impl Default for WprgBuildParams {
    fn default() -> Self {
        Self { degree_bits: 8, lambda_threshold: None, graph_seed: 0 }
    }
}

/// The fully materialized construction.
#[derive(Debug, Clone)]
pub struct WprgDescriptor {
    pub n: usize,
    pub w: usize,
    pub gamma: Rat,
    pub eps: Rat,
    pub k: u32,
    pub enum_bits: usize,
    /// Padded multiset size 2^(2 k log2 n); the weight takes values in
    /// {-s_size, 0, +s_size}.
    pub s_size: u64,
    /// Total seed length d = enum_bits + expander-walk seed bits.
    pub seed_bits: u32,
    pub eps_inw_target: Rat,
    pub max_term_inw_error: Rat,
    pub base_inf_error: Rat,
    pub base_weight_error: Rat,
    pub g0: G0Generator,
    pub g_inw: InwGenerator,
}

/// Serializable summary: everything needed to reproduce and audit a run.
#[derive(Debug, Clone, Serialize)]
pub struct WprgDescriptorSummary {
    pub n: usize,
    pub w: usize,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub gamma: Rat,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub eps: Rat,
    pub k: u32,
    pub enum_bits: usize,
    pub s_size: u64,
    pub seed_bits: u32,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub eps_inw_target: Rat,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub max_term_inw_error: Rat,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub base_inf_error: Rat,
    #[serde(with = "crate::ratlin::rat_serde")]
    pub base_weight_error: Rat,
    pub inw_lambda: f64,
    pub g0: G0Config,
    pub g0_inner: Option<InwConfig>,
    pub g_inw: InwConfig,
}

impl WprgDescriptor {
    pub fn summary(&self) -> WprgDescriptorSummary {
        WprgDescriptorSummary {
            n: self.n,
            w: self.w,
            gamma: self.gamma.clone(),
            eps: self.eps.clone(),
            k: self.k,
            enum_bits: self.enum_bits,
            s_size: self.s_size,
            seed_bits: self.seed_bits,
            eps_inw_target: self.eps_inw_target.clone(),
            max_term_inw_error: self.max_term_inw_error.clone(),
            base_inf_error: self.base_inf_error.clone(),
            base_weight_error: self.base_weight_error.clone(),
            inw_lambda: self.g_inw.max_lambda(),
            g0: *self.g0.config(),
            g0_inner: self.g0.inner_config(),
            g_inw: self.g_inw.config(),
        }
    }
}

/// Exhaustive-evaluation cap on the total seed length.
pub const EVAL_SEED_BITS_CAP: u32 = 26;

struct Assembled {
    descriptor: WprgDescriptor,
    provider: BaseProvider,
    distinct_terms: Vec<SignedSequence>,
}

/// Wires the pieces together without quality gates; measurement and gating
/// happen in `build_wprg`.
fn assemble(
    program: &Arc<RegularRobp>,
    eps: Rat,
    gamma: Rat,
    k: u32,
    g0: G0Generator,
    params: WprgBuildParams,
) -> Result<Assembled, WprgError> {
    let n = program.n();
    let enum_bits = enum_bits_width(n, k);
    if enum_bits > 32 {
        return Err(WprgError::EnumTooWide { bits: enum_bits });
    }
    let s_size = 1u64 << enum_bits;
    let eps_inw_target = eps.clone() / (rat_int(2) * rat_int(s_size as i64));
    let h = k as usize * n.trailing_zeros() as usize + 1;
    let g_inw = InwGenerator::build(
        BitGenerator::seed_bits(&g0),
        h,
        params.degree_bits,
        params.lambda_threshold,
        params.graph_seed,
    )?;
    let seed_bits = enum_bits as u32 + g_inw.seed_bits();
    let provider = BaseProvider::prg_backed(program.clone(), Arc::new(g0.clone()));
    let mut distinct_terms = expand(0, n, k, n)?;
    distinct_terms.sort();
    distinct_terms.dedup();
    let descriptor = WprgDescriptor {
        n,
        w: program.w(),
        gamma,
        eps,
        k,
        enum_bits,
        s_size,
        seed_bits,
        eps_inw_target,
        max_term_inw_error: Rat::zero(),
        base_inf_error: Rat::zero(),
        base_weight_error: Rat::zero(),
        g0,
        g_inw,
    };
    Ok(Assembled { descriptor, provider, distinct_terms })
}

/// Builds the weighted PRG for a target error:
///
/// 1. pick the minimal level k with eps(k) <= eps/2;
/// 2. build the expander stack for h = k log2(n) + 1 blocks;
/// 3. measure the base generator's level-0 quality (inf-norm always, the
///    weight certificate when k >= 1) and the per-term expander-product
///    errors against the target eps / (2 |S|);
/// 4. reject with the measured value if any certificate misses.
pub fn build_wprg(
    program: &Arc<RegularRobp>,
    eps: Rat,
    gamma: Rat,
    g0_config: G0Config,
    params: WprgBuildParams,
) -> Result<WprgDescriptor, WprgError> {
    if !eps.is_positive() {
        return Err(WprgError::BadEps);
    }
    let n = program.n();
    let schedule = EpsSchedule::new(gamma.clone(), n)?;
    let half = eps.clone() / rat_int(2);
    let k = schedule.min_level_within(&half);
    let g0 = G0Generator::build(n, g0_config)?;
    let Assembled { mut descriptor, provider, distinct_terms } =
        assemble(program, eps.clone(), gamma, k, g0, params)?;

    let mut base_inf = Rat::zero();
    let mut base_weight = Rat::zero();
    let test_set = crate::weights::structured_test_set(program.w(), 0x6057, 8);
    let weight_cap = crate::weights::default_weight_cap(program.w());
    for (l, r) in bs_intervals(n) {
        let base = provider.level0(l, r)?;
        let err = base.sub(&program.rw_matrix(l, r)?)?;
        base_inf = base_inf.max(err.inf_norm());
        if k >= 1 {
            let measured = crate::weights::weight_approx_error(
                program, &base, l, r, &test_set, &weight_cap,
            )
            .map_err(|e| WprgError::Weight(e.to_string()))?;
            base_weight = base_weight.max(measured);
        }
    }
    descriptor.base_inf_error = base_inf.clone();
    descriptor.base_weight_error = base_weight.clone();

    if k == 0 {
        // No error reduction: the top-level base must carry the bound alone.
        if base_inf > half {
            return Err(WprgError::BaseTooWeak {
                measured: base_inf.to_string(),
                required: half.to_string(),
                context: "inf-norm of the level-0 deviation at k = 0",
            });
        }
    } else {
        let budget = schedule.eps(0) / rat_int(3);
        if base_weight > budget {
            return Err(WprgError::BaseTooWeak {
                measured: base_weight.to_string(),
                required: budget.to_string(),
                context: "weight certificate of the level-0 matrices",
            });
        }
    }

    let mut max_term = Rat::zero();
    if descriptor.g_inw.block_count() > 1 {
        for seq in &distinct_terms {
            let err = per_term_walk_error(
                program,
                &provider,
                &descriptor.g_inw,
                &descriptor.g0,
                seq,
            )?;
            max_term = max_term.max(err);
        }
        if max_term > descriptor.eps_inw_target {
            return Err(WprgError::InwTargetMissed {
                target: descriptor.eps_inw_target.to_string(),
                achievable: max_term.to_string(),
            });
        }
    }
    descriptor.max_term_inw_error = max_term;
    Ok(descriptor)
}

/// Test-oriented constructor that skips the quality gates but still records
/// the measured per-term errors; the sandwich inequality tests use it to
/// exercise levels the certified build would refuse at desk scale.
pub fn assemble_wprg_unchecked(
    program: &Arc<RegularRobp>,
    eps: Rat,
    gamma: Rat,
    k: u32,
    g0_config: G0Config,
    params: WprgBuildParams,
) -> Result<WprgDescriptor, WprgError> {
    let g0 = G0Generator::build(program.n(), g0_config)?;
    let Assembled { mut descriptor, provider, distinct_terms } =
        assemble(program, eps, gamma, k, g0, params)?;
    let mut max_term = Rat::zero();
    if descriptor.g_inw.block_count() > 1 {
        for seq in &distinct_terms {
            let err = per_term_walk_error(
                program,
                &provider,
                &descriptor.g_inw,
                &descriptor.g0,
                seq,
            )?;
            max_term = max_term.max(err);
        }
    }
    descriptor.max_term_inw_error = max_term;
    Ok(descriptor)
}

fn bits_of_index(index: u64, width: usize) -> Vec<bool> {
    (0..width).map(|i| (index >> i) & 1 == 1).collect()
}

fn enum_table(n: usize, k: u32) -> Vec<SignedSequence> {
    let width = enum_bits_width(n, k);
    (0..(1u64 << width)).map(|i| enum_term(n, k, &bits_of_index(i, width))).collect()
}

/// The n-bit output of the construction on one seed, together with its
/// weight sign. Dummy terms yield sign 0.
pub fn wprg_output(desc: &WprgDescriptor, table: &[SignedSequence], seed: u64) -> (i8, Vec<bool>) {
    let index = seed & ((1u64 << desc.enum_bits) - 1);
    let seq = &table[index as usize];
    let syms = desc.g_inw.sample(seed >> desc.enum_bits);
    let mut out = Vec::with_capacity(desc.n);
    for (j, win) in seq.indices.windows(2).enumerate() {
        let len = win[1] - win[0];
        out.extend(desc.g0.bits(syms[j], len));
    }
    (seq.sign, out)
}

/// Exact weighted average of the program over the full seed space:
/// sum over seeds of sign * |S| * B(output) / 2^d.
pub fn eval_wprg(program: &RegularRobp, desc: &WprgDescriptor) -> Result<Rat, WprgError> {
    if desc.seed_bits > EVAL_SEED_BITS_CAP {
        return Err(WprgError::SeedSpaceTooLarge { bits: desc.seed_bits });
    }
    let table = enum_table(desc.n, desc.k);
    let total = 1u64 << desc.seed_bits;
    let chunk = (total / 256).max(1 << 12);
    let chunk_count = total.div_ceil(chunk);
    let signed_hits: i64 = (0..chunk_count)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(total);
            let mut acc = 0i64;
            for seed in lo..hi {
                let (sign, bits) = wprg_output(desc, &table, seed);
                if sign == 0 {
                    continue;
                }
                let accepted = program.eval(&bits).expect("output has length n");
                acc += i64::from(sign) * i64::from(accepted);
            }
            acc
        })
        .sum();
    Ok(Rat::new(
        num::BigInt::from(signed_hits) * num::BigInt::from(desc.s_size),
        num::BigInt::from(total),
    ))
}

/// Matrix form of the weighted average: sum of sign * |S| * M_{0..n}(output)
/// over the seed space, exactly. Feeds the correctness-chain checks.
pub fn eval_wprg_matrix(program: &RegularRobp, desc: &WprgDescriptor) -> Result<RatMatrix, WprgError> {
    if desc.seed_bits > EVAL_SEED_BITS_CAP {
        return Err(WprgError::SeedSpaceTooLarge { bits: desc.seed_bits });
    }
    let table = enum_table(desc.n, desc.k);
    let w = program.w();
    let mut counts = vec![0i64; w * w];
    for seed in 0..(1u64 << desc.seed_bits) {
        let (sign, bits) = wprg_output(desc, &table, seed);
        if sign == 0 {
            continue;
        }
        let map = program.walk_map(0, desc.n, &bits)?;
        for (u, &v) in map.iter().enumerate() {
            counts[u * w + v] += i64::from(sign);
        }
    }
    let scale = Rat::new(num::BigInt::from(desc.s_size), num::BigInt::from(1u64 << desc.seed_bits));
    Ok(Matrix::from_fn(w, w, |i, j| rat_int(counts[i * w + j]) * scale.clone()))
}

/// Monte Carlo fallback when the seed space exceeds the exhaustive cap.
/// The result is an estimate, not an exact value.
pub fn eval_wprg_sampled(
    program: &RegularRobp,
    desc: &WprgDescriptor,
    samples: u64,
    rng_seed: u64,
) -> Result<Rat, WprgError> {
    assert!(samples > 0);
    let table = enum_table(desc.n, desc.k);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let mask = if desc.seed_bits == 64 { u64::MAX } else { (1u64 << desc.seed_bits) - 1 };
    let mut signed_hits = 0i64;
    for _ in 0..samples {
        let seed = rng.next_u64() & mask;
        let (sign, bits) = wprg_output(desc, &table, seed);
        if sign == 0 {
            continue;
        }
        signed_hits += i64::from(sign) * i64::from(program.eval(&bits)?);
    }
    Ok(Rat::new(
        num::BigInt::from(signed_hits) * num::BigInt::from(desc.s_size),
        num::BigInt::from(samples),
    ))
}
