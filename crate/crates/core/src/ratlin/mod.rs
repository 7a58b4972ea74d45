//! Dense linear algebra over a generic scalar.
//!
//! The matrix type is generic over any signed, ordered scalar so the same
//! kernels serve both the exact rational side and the floating-point spectral
//! side. All operations on rational matrices are exact; nothing here rounds.

mod exact;
mod numeric;

pub use exact::{inverse, kernel_basis, projector_onto_complement, rank};
pub use numeric::{psd_min_eig_probe, sym_eigen, two_norm_f64, two_norm_num};

use num::traits::Signed;
use num::{BigInt, BigRational, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::Rat;

/// Scalar requirements shared by the exact and numeric instantiations.
pub trait Scalar: Clone + PartialEq + PartialOrd + Signed {}
impl<T: Clone + PartialEq + PartialOrd + Signed> Scalar for T {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinAlgError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix dimensions must be at least 1x1 (got {rows}x{cols})")]
    EmptyShape { rows: usize, cols: usize },
    #[error("entry count {got} does not match {rows}x{cols}")]
    EntryCount { rows: usize, cols: usize, got: usize },
    #[error("linear combination over an empty term list")]
    EmptyCombination,
    #[error("matrix is singular")]
    Singular,
    #[error("eigensolve failed to converge within {0} sweeps")]
    NonConvergence(usize),
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<T>,
}

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vector<T> {
    entries: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<T>) -> Result<Self, LinAlgError> {
        if rows == 0 || cols == 0 {
            return Err(LinAlgError::EmptyShape { rows, cols });
        }
        if entries.len() != rows * cols {
            return Err(LinAlgError::EntryCount { rows, cols, got: entries.len() });
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be at least 1x1");
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self { rows, cols, entries }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| T::zero())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn mat_mul(&self, other: &Self) -> Result<Self, LinAlgError> {
        if self.cols != other.rows {
            return Err(LinAlgError::DimMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let cur = out.get(i, j).clone();
                    out.set(i, j, cur + a.clone() * other.get(k, j).clone());
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &Vector<T>) -> Result<Vector<T>, LinAlgError> {
        if self.cols != v.dim() {
            return Err(LinAlgError::DimMismatch(format!(
                "{}x{} * vec{}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let entries = (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..self.cols {
                    acc = acc + self.get(i, j).clone() * v.entries[j].clone();
                }
                acc
            })
            .collect();
        Ok(Vector { entries })
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinAlgError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinAlgError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, LinAlgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinAlgError::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| f(a.clone(), b.clone()))
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, entries })
    }

    pub fn scale(&self, c: &T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| c.clone() * e.clone()).collect(),
        }
    }

    /// Maximum over rows of the sum of absolute entry values.
    pub fn inf_norm(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.rows {
            let mut sum = T::zero();
            for j in 0..self.cols {
                sum = sum + self.get(i, j).abs();
            }
            if sum > best {
                best = sum;
            }
        }
        best
    }

    pub fn row_sums(&self) -> Vector<T> {
        Vector {
            entries: (0..self.rows)
                .map(|i| {
                    let mut acc = T::zero();
                    for j in 0..self.cols {
                        acc = acc + self.get(i, j).clone();
                    }
                    acc
                })
                .collect(),
        }
    }

    pub fn col_sums(&self) -> Vector<T> {
        Vector {
            entries: (0..self.cols)
                .map(|j| {
                    let mut acc = T::zero();
                    for i in 0..self.rows {
                        acc = acc + self.get(i, j).clone();
                    }
                    acc
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.is_zero())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

/// Exact signed sum of scaled matrices.
pub fn lin_combine<T: Scalar>(terms: &[(T, &Matrix<T>)]) -> Result<Matrix<T>, LinAlgError> {
    let (first_c, first_m) = terms.first().ok_or(LinAlgError::EmptyCombination)?;
    let mut acc = first_m.scale(first_c);
    for (c, m) in &terms[1..] {
        acc = acc.add(&m.scale(c))?;
    }
    Ok(acc)
}

impl<T: Scalar> Vector<T> {
    pub fn new(entries: Vec<T>) -> Result<Self, LinAlgError> {
        if entries.is_empty() {
            return Err(LinAlgError::EmptyShape { rows: 0, cols: 1 });
        }
        Ok(Self { entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize) -> T) -> Self {
        assert!(dim > 0, "vector dimension must be at least 1");
        Self { entries: (0..dim).map(&mut f).collect() }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_fn(dim, |_| T::zero())
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.entries[i]
    }

    pub fn set(&mut self, i: usize, v: T) {
        self.entries[i] = v;
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn inf_norm(&self) -> T {
        let mut best = T::zero();
        for e in &self.entries {
            let a = e.abs();
            if a > best {
                best = a;
            }
        }
        best
    }

    pub fn dot(&self, other: &Self) -> Result<T, LinAlgError> {
        if self.dim() != other.dim() {
            return Err(LinAlgError::DimMismatch(format!("vec{} . vec{}", self.dim(), other.dim())));
        }
        let mut acc = T::zero();
        for (a, b) in self.entries.iter().zip(&other.entries) {
            acc = acc + a.clone() * b.clone();
        }
        Ok(acc)
    }

    /// Squared Euclidean norm, exact for rational entries.
    pub fn norm2_sq(&self) -> T {
        let mut acc = T::zero();
        for e in &self.entries {
            acc = acc + e.clone() * e.clone();
        }
        acc
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinAlgError> {
        if self.dim() != other.dim() {
            return Err(LinAlgError::DimMismatch(format!("vec{} - vec{}", self.dim(), other.dim())));
        }
        Ok(Self {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a.clone() - b.clone())
                .collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.is_zero())
    }
}

/// Shorthand for small rational constants.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion of an f64 to a rational. Panics on non-finite input.
pub fn rat_from_f64(x: f64) -> Rat {
    BigRational::from_float(x).expect("finite float")
}

pub fn rat_to_f64(x: &Rat) -> f64 {
    // Scale into f64 range via the bit lengths of numerator and denominator.
    let num_bits = x.numer().bits() as i64;
    let den_bits = x.denom().bits() as i64;
    let shift = (num_bits.max(den_bits) - 900).max(0) as u64;
    let num = x.numer() >> shift;
    let den = x.denom() >> shift;
    let nf = num.to_string().parse::<f64>().unwrap_or(f64::NAN);
    let df = den.to_string().parse::<f64>().unwrap_or(f64::NAN);
    if df == 0.0 {
        return if nf >= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    nf / df
}

pub fn to_f64_matrix(m: &Matrix<Rat>) -> Matrix<f64> {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| rat_to_f64(m.get(i, j)))
}

pub fn to_f64_vector(v: &Vector<Rat>) -> Vector<f64> {
    Vector::from_fn(v.dim(), |i| rat_to_f64(v.get(i)))
}

/// Canonical decimal string for a rational: `p/q` in lowest terms.
pub fn rat_to_string(x: &Rat) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Parses `p`, `p/q`, or a plain decimal like `0.49`, all exactly.
pub fn rat_from_str(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n = BigInt::from_str(num.trim()).map_err(|e| e.to_string())?;
        let d = BigInt::from_str(den.trim()).map_err(|e| e.to_string())?;
        if d.is_zero() {
            return Err("zero denominator".into());
        }
        return Ok(Rat::new(n, d));
    }
    // Scientific notation like 1e-4 comes up in CLI epsilon arguments.
    if let Some((mant, exp)) = s.split_once(['e', 'E']) {
        let m = rat_from_str(mant)?;
        let e: i32 = exp.parse().map_err(|_| format!("bad exponent in {s:?}"))?;
        let ten = rat_int(10);
        let p = num::pow::pow(ten, e.unsigned_abs() as usize);
        return Ok(if e >= 0 { m * p } else { m / p });
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let negative = int_part.trim_start().starts_with('-');
        let int_part = if int_part.is_empty() || int_part == "-" { "0" } else { int_part };
        let i = BigInt::from_str(int_part).map_err(|e| e.to_string())?;
        if frac_part.is_empty() {
            return Ok(Rat::from_integer(i));
        }
        let f = BigInt::from_str(frac_part).map_err(|e| e.to_string())?;
        let scale = num::pow::pow(BigInt::from(10), frac_part.len());
        let frac = Rat::new(f, scale);
        let whole = Rat::from_integer(i);
        return Ok(if negative { whole - frac } else { whole + frac });
    }
    let n = BigInt::from_str(s).map_err(|e| e.to_string())?;
    Ok(Rat::from_integer(n))
}

impl fmt::Display for Matrix<Rat> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| rat_to_string(self.get(i, j))).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    entries: Vec<String>,
}

impl Serialize for Matrix<Rat> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MatrixJson {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(rat_to_string).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix<Rat> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(deserializer)?;
        let entries = raw
            .entries
            .iter()
            .map(|s| rat_from_str(s).map_err(D::Error::custom))
            .collect::<Result<Vec<_>, _>>()?;
        Matrix::new(raw.rows, raw.cols, entries).map_err(D::Error::custom)
    }
}

/// Serde adapter for rational fields stored as `p/q` strings.
pub mod rat_serde {
    use super::{rat_from_str, rat_to_string};
    use crate::Rat;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Rat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rat_to_string(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        let s = String::deserialize(d)?;
        rat_from_str(&s).map_err(D::Error::custom)
    }
}
