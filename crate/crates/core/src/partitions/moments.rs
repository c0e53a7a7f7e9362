//! The majorizing moment sequence `a_n` for the excursion-measure moment bound.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

/// `a_1 = c_1`, `a_{n+1} = c_1 (2c_1²)^n (2n)!/n!`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentSequence {
    #[serde(serialize_with = "ser_rational")]
    pub c1: BigRational,
    /// `terms[k]` holds `a_{k+1}`.
    #[serde(serialize_with = "ser_rationals")]
    pub terms: Vec<BigRational>,
}

fn ser_rational<S: serde::Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

fn ser_rationals<S: serde::Serializer>(
    xs: &[BigRational],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(|x| x.to_string()))
}

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn binomial(n: u64, k: u64) -> BigInt {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `a_n` by the closed form, for `n >= 1`.
fn closed_form(c1: &BigRational, n: u64) -> BigRational {
    let m = n - 1;
    let two_c1_sq = BigRational::from_integer(2.into()) * c1 * c1;
    let mut p = BigRational::one();
    for _ in 0..m {
        p *= &two_c1_sq;
    }
    c1 * p * BigRational::from_integer(factorial(2 * m) / factorial(m))
}

/// Right-hand side of the recursion, `2c_1 Σ_{j=1}^{n-1} C(n,j) x_{n-j} x_j`, with `x[k] = x_{k+1}`.
fn recursion_rhs(c1: &BigRational, x: &[BigRational], n: usize) -> BigRational {
    let mut acc = BigRational::zero();
    for j in 1..n {
        acc += BigRational::from_integer(binomial(n as u64, j as u64)) * &x[n - j - 1] * &x[j - 1];
    }
    BigRational::from_integer(2.into()) * c1 * acc
}

/// Builds `a_1..a_{n_max}` by the closed form and checks the recursion exactly.
pub fn moment_sequence(c1: BigRational, n_max: usize) -> Result<MomentSequence> {
    if !c1.is_positive() {
        return Err(Error::InvalidParameter(format!("c1 = {c1} must be positive")));
    }
    if n_max == 0 || n_max > 20 {
        return Err(Error::InvalidParameter(format!("n_max = {n_max} outside 1..=20")));
    }
    let terms: Vec<BigRational> = (1..=n_max as u64).map(|n| closed_form(&c1, n)).collect();
    for n in 2..=n_max {
        if recursion_rhs(&c1, &terms, n) != terms[n - 1] {
            return Err(Error::Numerical(format!("closed form and recursion disagree at n = {n}")));
        }
    }
    Ok(MomentSequence { c1, terms })
}

impl MomentSequence {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `a_n` (1-based).
    pub fn a(&self, n: usize) -> &BigRational {
        &self.terms[n - 1]
    }

    /// Checks the comparison principle on a candidate sequence.
    ///
    /// Returns `Ok(true)` when `c` satisfies `c_1 <= a_1` and the recursive
    /// upper bound `c_n <= 2c_1 Σ C(n,j) c_{n-j} c_j` for every listed `n`, and
    /// then also `c_n <= a_n` throughout; `Ok(false)` when the hypotheses hold
    /// but the conclusion fails; an error when the hypotheses fail.
    pub fn dominates(&self, c: &[BigRational]) -> Result<bool> {
        if c.is_empty() || c.len() > self.terms.len() {
            return Err(Error::InvalidParameter("candidate length out of range".into()));
        }
        if c.iter().any(|x| x.is_negative()) {
            return Err(Error::InvalidParameter("candidate has a negative term".into()));
        }
        if c[0] > self.c1 {
            return Err(Error::InvalidParameter("c_1 exceeds a_1".into()));
        }
        for n in 2..=c.len() {
            if c[n - 1] > recursion_rhs(&self.c1, c, n) {
                return Err(Error::InvalidParameter(format!("recursive bound fails at n = {n}")));
            }
        }
        Ok(c.iter().zip(&self.terms).all(|(x, a)| x <= a))
    }

    /// Checks `a_n <= n! M^n` for every term, which bounds `a_n^{1/n}/n`.
    pub fn factorial_growth_bound(&self, m: &BigRational) -> bool {
        let mut mp = BigRational::one();
        for (k, a) in self.terms.iter().enumerate() {
            let n = k as u64 + 1;
            mp *= m;
            if *a > BigRational::from_integer(factorial(n)) * &mp {
                return false;
            }
        }
        true
    }
}
