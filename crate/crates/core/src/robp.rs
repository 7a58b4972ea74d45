//! Regular read-once branching programs and their matrix view.
//!
//! A program of length `n` (a power of two) and width `w` is a stack of `n`
//! transition tables. Regularity means every state in every layer has exactly
//! two labelled pre-images, which makes all random-walk matrices doubly
//! stochastic. The module also carries a seeded instance generator and a
//! brute-force expectation oracle used as ground truth everywhere else.

use num::{One, Zero};
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratlin::{rat, LinAlgError, Matrix, Vector};
use crate::{Rat, RatMatrix, RatVector};

/// Default cap for the exhaustive 2^n input enumeration.
pub const DEFAULT_ENUM_CAP: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RobpError {
    #[error("program length {0} is not a power of two")]
    LengthNotPowerOfTwo(usize),
    #[error("width must be at least 1")]
    ZeroWidth,
    #[error("layer {layer}: transition target {target} out of range for width {width}")]
    TargetOutOfRange { layer: usize, target: usize, width: usize },
    #[error("start state {start} out of range for width {width}")]
    StartOutOfRange { start: usize, width: usize },
    #[error("accept state {state} out of range for width {width}")]
    AcceptOutOfRange { state: usize, width: usize },
    #[error("layer {layer} has {count} tables, width is {width}")]
    LayerShape { layer: usize, count: usize, width: usize },
    #[error("not regular: {0}")]
    NotRegular(RegularityViolation),
    #[error("layer index {index} out of range 1..={n}")]
    LayerIndexOutOfRange { index: usize, n: usize },
    #[error("interval ({l},{r}) out of range for length {n}")]
    BadInterval { l: usize, r: usize, n: usize },
    #[error("input has {got} bits, expected {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("exhaustive enumeration refused: n={n} exceeds cap {cap}")]
    EnumCapExceeded { n: usize, cap: usize },
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

/// First regularity violation found while checking a candidate layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegularityViolation {
    /// 1-based layer index.
    pub layer: usize,
    pub state: usize,
    pub preimages: usize,
}

impl std::fmt::Display for RegularityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "layer {} state {} has {} pre-images (want exactly 2)",
            self.layer, self.state, self.preimages
        )
    }
}

/// One transition table: `targets[u][b]` is the successor of state `u` on bit `b`.
pub type Layer = Vec<[usize; 2]>;

/// A validated regular program. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegularRobp {
    n: usize,
    w: usize,
    layers: Vec<Layer>,
    start: usize,
    accept: Vec<bool>,
}

/// On-disk JSON shape, 0-based states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgramJson {
    pub n: usize,
    pub w: usize,
    pub start: usize,
    pub accept: Vec<usize>,
    pub layers: Vec<Vec<[usize; 2]>>,
}

/// Counts pre-images per state in every layer; Ok iff each is exactly 2.
pub fn check_regular(w: usize, layers: &[Layer]) -> Result<(), RegularityViolation> {
    for (li, layer) in layers.iter().enumerate() {
        let mut counts = vec![0usize; w];
        for targets in layer {
            for &t in targets {
                if t < w {
                    counts[t] += 1;
                }
            }
        }
        if let Some(state) = (0..w).find(|&v| counts[v] != 2) {
            return Err(RegularityViolation { layer: li + 1, state, preimages: counts[state] });
        }
    }
    Ok(())
}

fn is_power_of_two(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

impl RegularRobp {
    pub fn new(
        w: usize,
        layers: Vec<Layer>,
        start: usize,
        accept_states: &[usize],
    ) -> Result<Self, RobpError> {
        let n = layers.len();
        if !is_power_of_two(n) {
            return Err(RobpError::LengthNotPowerOfTwo(n));
        }
        if w == 0 {
            return Err(RobpError::ZeroWidth);
        }
        if start >= w {
            return Err(RobpError::StartOutOfRange { start, width: w });
        }
        for (li, layer) in layers.iter().enumerate() {
            if layer.len() != w {
                return Err(RobpError::LayerShape { layer: li + 1, count: layer.len(), width: w });
            }
            for targets in layer {
                for &t in targets {
                    if t >= w {
                        return Err(RobpError::TargetOutOfRange {
                            layer: li + 1,
                            target: t,
                            width: w,
                        });
                    }
                }
            }
        }
        check_regular(w, &layers).map_err(RobpError::NotRegular)?;
        let mut accept = vec![false; w];
        for &s in accept_states {
            if s >= w {
                return Err(RobpError::AcceptOutOfRange { state: s, width: w });
            }
            accept[s] = true;
        }
        Ok(Self { n, w, layers, start, accept })
    }

    pub fn from_json(p: &ProgramJson) -> Result<Self, RobpError> {
        if p.layers.len() != p.n {
            return Err(RobpError::LengthNotPowerOfTwo(p.layers.len()));
        }
        Self::new(p.w, p.layers.clone(), p.start, &p.accept)
    }

    pub fn to_json(&self) -> ProgramJson {
        ProgramJson {
            n: self.n,
            w: self.w,
            start: self.start,
            accept: (0..self.w).filter(|&s| self.accept[s]).collect(),
            layers: self.layers.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn accepts_state(&self, s: usize) -> bool {
        self.accept[s]
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i - 1]
    }

    /// Successor of `state` in 1-based layer `i` on `bit`.
    pub fn step(&self, i: usize, state: usize, bit: bool) -> usize {
        self.layers[i - 1][state][bit as usize]
    }

    /// 0/1 transition matrix of layer `i` (1-based) on a fixed bit.
    pub fn transition_matrix(&self, i: usize, bit: bool) -> Result<RatMatrix, RobpError> {
        if i == 0 || i > self.n {
            return Err(RobpError::LayerIndexOutOfRange { index: i, n: self.n });
        }
        let mut m = Matrix::zeros(self.w, self.w);
        for u in 0..self.w {
            m.set(u, self.step(i, u, bit), Rat::one());
        }
        Ok(m)
    }

    /// Random-walk matrix of a single layer: the average of its two
    /// transition matrices.
    pub fn layer_walk_matrix(&self, i: usize) -> Result<RatMatrix, RobpError> {
        let half = rat(1, 2);
        let m0 = self.transition_matrix(i, false)?;
        let m1 = self.transition_matrix(i, true)?;
        Ok(m0.add(&m1)?.scale(&half))
    }

    fn check_interval(&self, l: usize, r: usize) -> Result<(), RobpError> {
        if l > r || r > self.n {
            return Err(RobpError::BadInterval { l, r, n: self.n });
        }
        Ok(())
    }

    /// The state map of the walk from layer `l` to layer `r` labelled by `bits`.
    pub fn walk_map(&self, l: usize, r: usize, bits: &[bool]) -> Result<Vec<usize>, RobpError> {
        self.check_interval(l, r)?;
        if bits.len() != r - l {
            return Err(RobpError::InputLength { got: bits.len(), expected: r - l });
        }
        let mut map: Vec<usize> = (0..self.w).collect();
        for (off, &b) in bits.iter().enumerate() {
            let i = l + off + 1;
            for entry in map.iter_mut() {
                *entry = self.step(i, *entry, b);
            }
        }
        Ok(map)
    }

    /// Transition matrix from layer `l` to layer `r` on the given bits;
    /// the empty product is the identity.
    pub fn walk_matrix(&self, l: usize, r: usize, bits: &[bool]) -> Result<RatMatrix, RobpError> {
        let map = self.walk_map(l, r, bits)?;
        let mut m = Matrix::zeros(self.w, self.w);
        for (u, &v) in map.iter().enumerate() {
            m.set(u, v, Rat::one());
        }
        Ok(m)
    }

    /// Random-walk matrix from layer `l` to layer `r`: the product of the
    /// per-layer averages. Exactly dyadic and doubly stochastic.
    pub fn rw_matrix(&self, l: usize, r: usize) -> Result<RatMatrix, RobpError> {
        self.check_interval(l, r)?;
        let mut m: RatMatrix = Matrix::identity(self.w);
        for i in (l + 1)..=r {
            m = m.mat_mul(&self.layer_walk_matrix(i)?)?;
        }
        Ok(m)
    }

    /// Runs the program on a full n-bit input.
    pub fn eval(&self, input: &[bool]) -> Result<bool, RobpError> {
        if input.len() != self.n {
            return Err(RobpError::InputLength { got: input.len(), expected: self.n });
        }
        let mut state = self.start;
        for (i, &b) in input.iter().enumerate() {
            state = self.step(i + 1, state, b);
        }
        Ok(self.accept[state])
    }

    /// Indicator vectors of the start state and the accept set.
    pub fn start_accept_vectors(&self) -> (RatVector, RatVector) {
        let st = Vector::from_fn(self.w, |i| if i == self.start { Rat::one() } else { Rat::zero() });
        let ed = Vector::from_fn(self.w, |i| if self.accept[i] { Rat::one() } else { Rat::zero() });
        (st, ed)
    }

    /// Exact acceptance probability through the matrix view.
    pub fn matrix_expectation(&self) -> Rat {
        let (st, ed) = self.start_accept_vectors();
        let m = self.rw_matrix(0, self.n).expect("full interval is valid");
        let row = m.mat_vec(&ed).expect("shapes agree");
        st.dot(&row).expect("shapes agree")
    }

    /// Exact acceptance probability by enumerating all 2^n inputs.
    pub fn exhaustive_expectation(&self, cap: usize) -> Result<Rat, RobpError> {
        if self.n > cap {
            return Err(RobpError::EnumCapExceeded { n: self.n, cap });
        }
        let mut accepted = 0u64;
        let total = 1u64 << self.n;
        let mut bits = vec![false; self.n];
        for x in 0..total {
            for (i, b) in bits.iter_mut().enumerate() {
                *b = (x >> i) & 1 == 1;
            }
            if self.eval(&bits)? {
                accepted += 1;
            }
        }
        Ok(Rat::new(accepted.into(), total.into()))
    }

    /// Exact acceptance probability; for programs up to the default cap, the
    /// matrix route is cross-checked against full input enumeration.
    pub fn brute_expectation(&self) -> Rat {
        let via_matrix = self.matrix_expectation();
        if self.n <= DEFAULT_ENUM_CAP {
            let via_enum = self.exhaustive_expectation(DEFAULT_ENUM_CAP)
                .expect("within the cap");
            assert_eq!(via_matrix, via_enum, "matrix and enumeration oracle disagree");
        }
        via_matrix
    }

    /// Appends identity layers (which are regular and weight-free) until the
    /// length reaches `target`, which must be a power of two.
    pub fn pad_with_identity(&self, target: usize) -> Result<Self, RobpError> {
        if target < self.n {
            return Err(RobpError::BadInterval { l: self.n, r: target, n: target });
        }
        let mut layers = self.layers.clone();
        let id_layer: Layer = (0..self.w).map(|u| [u, u]).collect();
        layers.resize(target, id_layer);
        let accept: Vec<usize> = (0..self.w).filter(|&s| self.accept[s]).collect();
        Self::new(self.w, layers, self.start, &accept)
    }
}

/// Uniform index in `0..bound` from an RNG, rejection-sampled so the stream
/// is identical across platforms.
fn uniform_index(rng: &mut impl RngCore, bound: usize) -> usize {
    debug_assert!(bound > 0);
    let bound = bound as u64;
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % bound) as usize;
        }
    }
}

fn random_permutation(rng: &mut impl RngCore, w: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..w).collect();
    for i in (1..w).rev() {
        let j = uniform_index(rng, i + 1);
        perm.swap(i, j);
    }
    perm
}

/// Deterministic seeded generator of regular programs.
///
/// Each layer is the union of two random permutations, viewed as a 2-regular
/// bipartite multigraph; per state, the two outgoing edges are then assigned
/// bit labels at random. Every regular layer arises this way (a 2-regular
/// bipartite multigraph always splits into two matchings), so the family is
/// not limited to permutation programs. The start state and a nonempty
/// proper accept set are also drawn from the seed when `w > 1`.
pub fn gen_regular(n: usize, w: usize, seed: u64) -> Result<RegularRobp, RobpError> {
    if !is_power_of_two(n) {
        return Err(RobpError::LengthNotPowerOfTwo(n));
    }
    if w == 0 {
        return Err(RobpError::ZeroWidth);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let pi = random_permutation(&mut rng, w);
        let sigma = random_permutation(&mut rng, w);
        let mut layer: Layer = Vec::with_capacity(w);
        for u in 0..w {
            let flip = rng.next_u64() & 1 == 1;
            let (a, b) = (pi[u], sigma[u]);
            layer.push(if flip { [b, a] } else { [a, b] });
        }
        layers.push(layer);
    }
    let start = uniform_index(&mut rng, w);
    let accept: Vec<usize> = if w == 1 {
        vec![0]
    } else {
        // Nonempty proper subset keeps the expectation away from the trivial 0/1.
        let size = 1 + uniform_index(&mut rng, w - 1);
        let perm = random_permutation(&mut rng, w);
        let mut chosen: Vec<usize> = perm.into_iter().take(size).collect();
        chosen.sort_unstable();
        chosen
    };
    RegularRobp::new(w, layers, start, &accept)
}

/// The width-2 parity program: layer maps are v -> v xor bit.
#[cfg(test)]
pub fn parity_program(n: usize, accept_zero: bool) -> RegularRobp {
    let layer: Layer = vec![[0, 1], [1, 0]];
    let accept = if accept_zero { vec![0] } else { vec![1] };
    RegularRobp::new(2, vec![layer; n], 0, &accept).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratlin::rat_int;

    #[test]
    fn parity_transition_matrices() {
        let p = parity_program(2, true);
        let swap = Matrix::new(
            2,
            2,
            vec![rat_int(0), rat_int(1), rat_int(1), rat_int(0)],
        )
        .unwrap();
        assert_eq!(p.transition_matrix(1, true).unwrap(), swap);
        assert_eq!(p.transition_matrix(1, false).unwrap(), Matrix::identity(2));
        assert!(matches!(
            p.transition_matrix(3, false),
            Err(RobpError::LayerIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn identity_layer_transitions() {
        let layer: Layer = vec![[0, 0], [1, 1], [2, 2]];
        let p = RegularRobp::new(3, vec![layer], 0, &[0]).unwrap();
        assert_eq!(p.transition_matrix(1, false).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn walk_matrix_empty_product_and_composition() {
        let p = parity_program(2, true);
        assert_eq!(p.walk_matrix(1, 1, &[]).unwrap(), Matrix::identity(2));
        // swap followed by swap is the identity
        assert_eq!(p.walk_matrix(0, 2, &[true, true]).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn walk_composition_on_random_instances() {
        for seed in 0..5 {
            let p = gen_regular(8, 3, seed).unwrap();
            let x = [true, false, true];
            let y = [false, false, true, true, false];
            let lhs = p
                .walk_matrix(0, 3, &x)
                .unwrap()
                .mat_mul(&p.walk_matrix(3, 8, &y).unwrap())
                .unwrap();
            let mut xy = x.to_vec();
            xy.extend_from_slice(&y);
            assert_eq!(lhs, p.walk_matrix(0, 8, &xy).unwrap());
        }
    }

    #[test]
    fn rw_matrix_cases() {
        let p = parity_program(4, true);
        assert_eq!(p.rw_matrix(2, 2).unwrap(), Matrix::identity(2));
        let uniform = Matrix::new(2, 2, vec![rat(1, 2); 4]).unwrap();
        assert_eq!(p.rw_matrix(0, 1).unwrap(), uniform);
    }

    #[test]
    fn rw_matrix_is_doubly_stochastic() {
        for seed in [1, 2, 3] {
            let p = gen_regular(8, 4, seed).unwrap();
            for (l, r) in [(0, 8), (2, 6), (3, 4), (0, 3)] {
                let m = p.rw_matrix(l, r).unwrap();
                assert!(m.row_sums().entries().iter().all(|s| s.is_one()));
                assert!(m.col_sums().entries().iter().all(|s| s.is_one()));
            }
        }
    }

    #[test]
    fn rw_matrix_is_average_of_walks() {
        let p = gen_regular(16, 3, 11).unwrap();
        for (l, r) in [(1usize, 4usize), (0, 8), (2, 14)] {
            let len = r - l;
            let mut acc: RatMatrix = Matrix::zeros(3, 3);
            for x in 0..(1u32 << len) {
                let bits: Vec<bool> = (0..len).map(|i| (x >> i) & 1 == 1).collect();
                acc = acc.add(&p.walk_matrix(l, r, &bits).unwrap()).unwrap();
            }
            let avg = acc.scale(&rat(1, 1 << len));
            assert_eq!(avg, p.rw_matrix(l, r).unwrap());
        }
    }

    #[test]
    fn brute_expectation_cases() {
        let all: Vec<usize> = vec![0, 1];
        let layer: Layer = vec![[0, 1], [1, 0]];
        let p = RegularRobp::new(2, vec![layer.clone(); 2], 0, &all).unwrap();
        assert!(p.brute_expectation().is_one());
        let none = RegularRobp::new(2, vec![layer; 2], 0, &[]).unwrap();
        assert!(none.brute_expectation().is_zero());
        let parity = parity_program(2, true);
        assert_eq!(parity.brute_expectation(), rat(1, 2));
    }

    #[test]
    fn program_indicator_identity() {
        let p = gen_regular(4, 3, 5).unwrap();
        let (st, ed) = p.start_accept_vectors();
        for x in 0..16u32 {
            let bits: Vec<bool> = (0..4).map(|i| (x >> i) & 1 == 1).collect();
            let m = p.walk_matrix(0, 4, &bits).unwrap();
            let val = st.dot(&m.mat_vec(&ed).unwrap()).unwrap();
            assert_eq!(p.eval(&bits).unwrap(), val.is_one());
        }
    }

    #[test]
    fn generator_is_deterministic_and_regular() {
        let a = gen_regular(4, 3, 7).unwrap();
        let b = gen_regular(4, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(check_regular(a.w(), &a.layers).is_ok());
        let trivial = gen_regular(2, 1, 99).unwrap();
        assert_eq!(trivial.w(), 1);
        assert!(trivial.brute_expectation().is_one());
    }

    #[test]
    fn generator_reaches_non_permutation_layers() {
        // Some seed must produce a layer whose bit-0 map is not a bijection.
        let found = (0..64u64).any(|seed| {
            let p = gen_regular(4, 3, seed).unwrap();
            (1..=4).any(|i| {
                let mut hit = [false; 3];
                let mut collision = false;
                for u in 0..3 {
                    let t = p.step(i, u, false);
                    if hit[t] {
                        collision = true;
                    }
                    hit[t] = true;
                }
                collision
            })
        });
        assert!(found, "bit-labelled maps never left the permutation family");
    }

    #[test]
    fn regularity_checker_counts_preimages() {
        // All four edges point at state 0: four pre-images there, none at 1.
        let bad: Layer = vec![[0, 0], [0, 0]];
        let err = check_regular(2, &[bad]).unwrap_err();
        assert_eq!(err.state, 0);
        assert_eq!(err.preimages, 4);
        // The constant-1 layer is just as irregular, caught at state 0.
        let bad1: Layer = vec![[1, 1], [1, 1]];
        let err1 = check_regular(2, &[bad1]).unwrap_err();
        assert_eq!((err1.state, err1.preimages), (0, 0));
        let parity = parity_program(2, true);
        assert!(check_regular(2, &parity.layers).is_ok());
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        let layer: Layer = vec![[0, 1], [1, 0]];
        assert!(matches!(
            RegularRobp::new(2, vec![layer.clone(); 3], 0, &[0]),
            Err(RobpError::LengthNotPowerOfTwo(3))
        ));
        assert!(matches!(
            RegularRobp::new(2, vec![layer; 2], 5, &[0]),
            Err(RobpError::StartOutOfRange { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let p = gen_regular(4, 3, 42).unwrap();
        let js = serde_json::to_string(&p.to_json()).unwrap();
        let parsed: ProgramJson = serde_json::from_str(&js).unwrap();
        assert_eq!(RegularRobp::from_json(&parsed).unwrap(), p);
    }

    #[test]
    fn identity_padding_preserves_expectation() {
        let p = gen_regular(4, 3, 3).unwrap();
        let padded = p.pad_with_identity(8).unwrap();
        assert_eq!(padded.n(), 8);
        assert_eq!(padded.brute_expectation(), p.brute_expectation());
    }
}
