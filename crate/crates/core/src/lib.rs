//! Error-reduction toolkit for regular read-once branching programs.
//!
//! Everything on the recursion side is exact: matrices over arbitrary-precision
//! rationals, so every algebraic identity in the framework can be checked by
//! literal equality. Floating point appears only inside the spectral routines
//! (2-norm estimates, singular-value approximation certificates).
//!
//! The crate is organised around the pipeline:
//!
//! * [`ratlin`]: dense linear algebra over a generic scalar, instantiated at
//!   [`Rat`] for the exact side and `f64` for the numeric side;
//! * [`robp`]: regular branching programs, their walk matrices and a
//!   brute-force expectation oracle;
//! * [`approx`]: the level-k approximation recursion over binary-splitting
//!   intervals, with pluggable base-case providers;
//! * [`weights`]: the edge-disagreement weight measure and the weight-based
//!   error-propagation harness;
//! * [`svapprox`]: singular-value approximation certificates and the
//!   SV-based propagation harness;
//! * [`wprg`]: term expansion, INW generators and the final weighted PRG;
//! * [`spacerec`]: the generalized recursion, its h-split identity,
//!   the inverse-Laplacian/Richardson equivalence and the expectation
//!   estimator with space-proxy accounting.


pub mod approx;
pub mod ratlin;
pub mod robp;
pub mod spacerec;
pub mod svapprox;
pub mod wprg;
pub mod weights;





/// Exact scalar used throughout the recursion side.
pub type Rat = num::BigRational;
/// Dense exact matrix.
pub type RatMatrix = ratlin::Matrix<Rat>;
/// Dense exact vector.
pub type RatVector = ratlin::Vector<Rat>;
/// Dense floating-point matrix, used only by the spectral routines.
pub type F64Matrix = ratlin::Matrix<f64>;
