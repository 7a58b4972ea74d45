//! Expander-walk generators: seeded circulant expanders with numerically
//! verified spectral gaps, the recursive INW generator over an arbitrary
//! symbol alphabet, and the bit-output base generator used as the level-0
//! source of the weighted PRG.
//!
//! Explicitness in the asymptotic sense is deliberately traded away: the
//! expanders are random circulants whose second eigenvalue is measured and
//! recorded, so every instance carries its own certificate instead of a
//! construction-time guarantee.

use rand_core::{RngCore, SeedableRng};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::WprgError;
use crate::approx::BitGenerator;

/// Hard cap on expander node spaces (FFT size for the gap verification).
const MAX_LOG_NODES: u32 = 22;
/// Seeds tried before giving up on a spectral threshold.
const EXPANDER_RETRIES: u64 = 64;

/// Directed circulant multigraph on {0,1}^log_nodes with 2^degree_bits
/// offsets; the neighbor map is addition mod 2^log_nodes.
#[derive(Debug, Clone)]
pub struct CirculantExpander {
    log_nodes: u32,
    degree_bits: u32,
    offsets: Vec<u64>,
    /// Measured second-largest eigenvalue modulus of the walk matrix.
    pub lambda: f64,
    /// The graph seed that met the threshold.
    pub graph_seed: u64,
}

/// Largest nontrivial eigenvalue modulus of the normalized circulant walk:
/// the offset histogram's Fourier coefficients away from frequency zero.
fn circulant_lambda(log_nodes: u32, offsets: &[u64]) -> f64 {
    let size = 1usize << log_nodes;
    if size == 1 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
    for &o in offsets {
        buf[o as usize].re += 1.0;
    }
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    let degree = offsets.len() as f64;
    buf[1..].iter().map(|c| c.norm() / degree).fold(0.0, f64::max)
}

impl CirculantExpander {
    /// Draws offset sets from successive seeds until the measured gap meets
    /// the threshold.
    pub fn generate(
        log_nodes: u32,
        degree_bits: u32,
        lambda_threshold: f64,
        seed_start: u64,
    ) -> Result<Self, WprgError> {
        if log_nodes > MAX_LOG_NODES {
            return Err(WprgError::SeedSpaceTooLarge { bits: log_nodes });
        }
        let mask = (1u64 << log_nodes) - 1;
        let degree = 1usize << degree_bits;
        let mut best = f64::INFINITY;
        for attempt in 0..EXPANDER_RETRIES {
            let graph_seed = seed_start.wrapping_add(attempt);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                graph_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(log_nodes) << 32,
            );
            let offsets: Vec<u64> = (0..degree).map(|_| rng.next_u64() & mask).collect();
            let lambda = circulant_lambda(log_nodes, &offsets);
            if lambda <= lambda_threshold {
                return Ok(Self { log_nodes, degree_bits, offsets, lambda, graph_seed });
            }
            best = best.min(lambda);
        }
        Err(WprgError::ExpanderThreshold { requested: lambda_threshold, best })
    }

    pub fn log_nodes(&self) -> u32 {
        self.log_nodes
    }

    pub fn degree_bits(&self) -> u32 {
        self.degree_bits
    }

    pub fn neighbor(&self, node: u64, edge: u64) -> u64 {
        let mask = (1u64 << self.log_nodes) - 1;
        (node + self.offsets[(edge & ((1 << self.degree_bits) - 1)) as usize]) & mask
    }
}

/// A threshold that random circulants of the given size and degree meet
/// after a few retries, floored so tiny graphs stay honest.
pub fn default_lambda_threshold(log_nodes: u32, degree_bits: u32) -> f64 {
    let m = log_nodes as f64;
    let d = (1u64 << degree_bits) as f64;
    (2.0 * ((m + 2.0) * std::f64::consts::LN_2 / d).sqrt()).clamp(0.05, 0.98)
}

/// Recursive expander-product generator. Level j pairs a seed of the
/// level-(j-1) space with an expander edge; the output doubles per level.
#[derive(Debug, Clone)]
pub struct InwGenerator {
    symbol_bits: u32,
    degree_bits: u32,
    block_count: usize,
    levels: Vec<CirculantExpander>,
}

/// Serializable summary of an INW instance, enough to reconstruct it.
#[derive(Debug, Clone, Serialize)]
pub struct InwConfig {
    pub symbol_bits: u32,
    pub block_count: usize,
    pub degree_bits: u32,
    pub verified_lambdas: Vec<f64>,
    pub graph_seeds: Vec<u64>,
    pub seed_bits: u32,
}

impl InwGenerator {
    /// Builds the expander stack for `block_count` output symbols (padded to
    /// a power of two internally).
    pub fn build(
        symbol_bits: u32,
        block_count: usize,
        degree_bits: u32,
        lambda_threshold: Option<f64>,
        graph_seed: u64,
    ) -> Result<Self, WprgError> {
        assert!(block_count >= 1, "need at least one output block");
        let level_count = block_count.next_power_of_two().trailing_zeros();
        let mut levels = Vec::with_capacity(level_count as usize);
        for j in 0..level_count {
            let log_nodes = symbol_bits + j * degree_bits;
            let threshold = lambda_threshold
                .unwrap_or_else(|| default_lambda_threshold(log_nodes, degree_bits));
            levels.push(CirculantExpander::generate(
                log_nodes,
                degree_bits,
                threshold,
                graph_seed.wrapping_add(u64::from(j) << 48),
            )?);
        }
        let gen = Self { symbol_bits, degree_bits, block_count, levels };
        if gen.seed_bits() > 63 {
            return Err(WprgError::SeedSpaceTooLarge { bits: gen.seed_bits() });
        }
        Ok(gen)
    }

    pub fn symbol_bits(&self) -> u32 {
        self.symbol_bits
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn seed_bits(&self) -> u32 {
        self.symbol_bits + self.levels.len() as u32 * self.degree_bits
    }

    pub fn config(&self) -> InwConfig {
        InwConfig {
            symbol_bits: self.symbol_bits,
            block_count: self.block_count,
            degree_bits: self.degree_bits,
            verified_lambdas: self.levels.iter().map(|e| e.lambda).collect(),
            graph_seeds: self.levels.iter().map(|e| e.graph_seed).collect(),
            seed_bits: self.seed_bits(),
        }
    }

    /// Worst verified eigenvalue across the stack (0 for a single block).
    pub fn max_lambda(&self) -> f64 {
        self.levels.iter().map(|e| e.lambda).fold(0.0, f64::max)
    }

    fn expand(&self, level: usize, seed: u64, out: &mut Vec<u64>) {
        if level == 0 {
            out.push(seed & ((1 << self.symbol_bits) - 1));
            return;
        }
        let below_bits = self.symbol_bits + (level as u32 - 1) * self.degree_bits;
        let s = seed & ((1 << below_bits) - 1);
        let e = seed >> below_bits;
        self.expand(level - 1, s, out);
        self.expand(level - 1, self.levels[level - 1].neighbor(s, e), out);
    }

    /// The `block_count` output symbols on the given seed.
    pub fn sample(&self, seed: u64) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.block_count.next_power_of_two());
        self.expand(self.levels.len(), seed, &mut out);
        out.truncate(self.block_count);
        out
    }
}

/// Configuration of the base bit generator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct G0Config {
    pub symbol_bits: u32,
    pub degree_bits: u32,
    /// None means the size-adaptive default threshold per level.
    pub lambda_threshold: Option<f64>,
    pub graph_seed: u64,
}

impl Default for G0Config {
    fn default() -> Self {
        Self { symbol_bits: 2, degree_bits: 8, lambda_threshold: None, graph_seed: 0 }
    }
}

impl G0Config {
    /// Degree fitted to the output length so the seed space stays small
    /// enough for exact averaging over all seeds.
    pub fn fitted(n: usize, graph_seed: u64) -> Self {
        let symbol_bits = 2u32;
        let tail = n.saturating_sub(1).max(1);
        let blocks = tail.div_ceil(symbol_bits as usize);
        let levels = blocks.next_power_of_two().trailing_zeros().max(1);
        let degree_bits = ((15u32.saturating_sub(symbol_bits)) / levels).clamp(2, 8);
        Self { symbol_bits, degree_bits, lambda_threshold: None, graph_seed }
    }
}

/// The n-bit base generator: an INW generator over small bit blocks, wrapped
/// so the first output bit is a verbatim seed bit and therefore exactly
/// unbiased. That makes single-layer averages exact, which is what merges
/// the length-1 base case with the rest.
#[derive(Debug, Clone)]
pub struct G0Generator {
    out_bits: usize,
    inner: Option<InwGenerator>,
    config: G0Config,
}

impl G0Generator {
    pub fn build(out_bits: usize, config: G0Config) -> Result<Self, WprgError> {
        assert!(out_bits >= 1);
        let inner = if out_bits == 1 {
            None
        } else {
            let tail = out_bits - 1;
            let symbol_bits = config.symbol_bits.clamp(1, tail.min(16) as u32);
            let blocks = tail.div_ceil(symbol_bits as usize);
            Some(InwGenerator::build(
                symbol_bits,
                blocks,
                config.degree_bits,
                config.lambda_threshold,
                config.graph_seed,
            )?)
        };
        let gen = Self { out_bits, inner, config };
        if gen.seed_bits() > 63 {
            return Err(WprgError::SeedSpaceTooLarge { bits: gen.seed_bits() });
        }
        Ok(gen)
    }

    pub fn config(&self) -> &G0Config {
        &self.config
    }

    pub fn inner_config(&self) -> Option<InwConfig> {
        self.inner.as_ref().map(|g| g.config())
    }

    pub fn output(&self, seed: u64) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.out_bits);
        bits.push(seed & 1 == 1);
        if let Some(inner) = &self.inner {
            let symbols = inner.sample(seed >> 1);
            'outer: for sym in symbols {
                for b in 0..inner.symbol_bits() {
                    bits.push((sym >> b) & 1 == 1);
                    if bits.len() == self.out_bits {
                        break 'outer;
                    }
                }
            }
        }
        debug_assert_eq!(bits.len(), self.out_bits);
        bits
    }
}

impl BitGenerator for G0Generator {
    fn seed_bits(&self) -> u32 {
        1 + self.inner.as_ref().map_or(0, |g| g.seed_bits())
    }

    fn bits(&self, seed: u64, count: usize) -> Vec<bool> {
        let mut out = self.output(seed);
        out.truncate(count);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expander_meets_threshold_and_is_deterministic() {
        let a = CirculantExpander::generate(8, 6, 0.5, 17).unwrap();
        let b = CirculantExpander::generate(8, 6, 0.5, 17).unwrap();
        assert_eq!(a.offsets, b.offsets);
        assert!(a.lambda <= 0.5);
        assert!(a.lambda > 0.0);
    }

    #[test]
    fn expander_threshold_failure_reports_best() {
        // An impossible gap on a tiny graph.
        let err = CirculantExpander::generate(2, 1, 1e-6, 0).unwrap_err();
        match err {
            WprgError::ExpanderThreshold { best, .. } => assert!(best > 1e-6),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn circulant_lambda_of_complete_multigraph_is_zero() {
        // One offset to every node: perfectly mixing in one step.
        let offsets: Vec<u64> = (0..8).collect();
        assert!(circulant_lambda(3, &offsets) < 1e-12);
    }

    #[test]
    fn inw_single_block_is_the_seed() {
        let g = InwGenerator::build(4, 1, 6, Some(0.5), 3).unwrap();
        assert_eq!(g.seed_bits(), 4);
        for seed in 0..16 {
            assert_eq!(g.sample(seed), vec![seed]);
        }
    }

    #[test]
    fn inw_two_blocks_share_first_symbol_across_edges() {
        let g = InwGenerator::build(3, 2, 4, Some(0.9), 5).unwrap();
        assert_eq!(g.seed_bits(), 3 + 4);
        let s = 0b101u64;
        let out_e0 = g.sample(s);
        let out_e1 = g.sample(s | 1 << 3);
        assert_eq!(out_e0.len(), 2);
        assert_eq!(out_e0[0], s);
        assert_eq!(out_e1[0], s);
        assert_eq!(g.sample(s), out_e0);
    }

    #[test]
    fn inw_symbols_have_uniform_marginals() {
        let g = InwGenerator::build(2, 4, 4, Some(0.9), 1).unwrap();
        let d = g.seed_bits();
        let mut counts = vec![[0u32; 4]; 4];
        for seed in 0..(1u64 << d) {
            for (j, sym) in g.sample(seed).into_iter().enumerate() {
                counts[j][sym as usize] += 1;
            }
        }
        let per = (1u32 << d) / 4;
        for block in counts {
            assert!(block.iter().all(|&c| c == per), "biased marginal: {block:?}");
        }
    }

    #[test]
    fn g0_first_bit_is_exactly_unbiased() {
        let g = G0Generator::build(4, G0Config { degree_bits: 4, ..Default::default() }).unwrap();
        let d = BitGenerator::seed_bits(&g);
        let mut ones = 0u64;
        for seed in 0..(1u64 << d) {
            ones += g.output(seed)[0] as u64;
        }
        assert_eq!(ones * 2, 1 << d);
    }

    #[test]
    fn g0_output_length_and_determinism() {
        for n in [1usize, 2, 4, 8, 16] {
            let g = G0Generator::build(n, G0Config::default()).unwrap();
            let seed = 0b1011_0110 & ((1 << BitGenerator::seed_bits(&g)) - 1);
            assert_eq!(g.output(seed).len(), n);
            assert_eq!(g.output(seed), g.output(seed));
            assert_eq!(g.bits(seed, n.min(3)).len(), n.min(3));
        }
    }
}
