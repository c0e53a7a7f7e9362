//! Sparse multivariate polynomials with exact rational coefficients.

use super::SubsetId;
use crate::error::{Error, Result};
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Formal variables used by the field identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// `u^B`: solution with boundary data concentrated on the targets in `B`.
    Upper(SubsetId),
    /// `u_B`: solution for hitting the complement of the `B` targets.
    Lower(SubsetId),
    /// `u`: solution for hitting the whole boundary.
    Total,
    /// Free scalar variable.
    W(u8),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Upper(b) => write!(f, "u^{b}"),
            Var::Lower(b) => write!(f, "u_{b}"),
            Var::Total => write!(f, "u"),
            Var::W(i) => write!(f, "w{i}"),
        }
    }
}

/// A monomial: variables with positive exponents, sorted by variable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(Var, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: Var) -> Self {
        Monomial(vec![(v, 1)])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.0
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() || j < other.0.len() {
            if j == other.0.len() || (i < self.0.len() && self.0[i].0 < other.0[j].0) {
                out.push(self.0[i]);
                i += 1;
            } else if i == self.0.len() || other.0[j].0 < self.0[i].0 {
                out.push(other.0[j]);
                j += 1;
            } else {
                out.push((self.0[i].0, self.0[i].1 + other.0[j].1));
                i += 1;
                j += 1;
            }
        }
        Monomial(out)
    }
}

/// Polynomial with `BigRational` coefficients; zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FormalPoly {
    terms: BTreeMap<Monomial, BigRational>,
}

impl FormalPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn int(c: i64) -> Self {
        Self::constant(BigRational::from_integer(c.into()))
    }

    pub fn var(v: Var) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::var(v), BigRational::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn add(&self, other: &FormalPoly) -> FormalPoly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &FormalPoly) -> FormalPoly {
        self.add(&other.scale(&-BigRational::one()))
    }

    pub fn scale(&self, c: &BigRational) -> FormalPoly {
        let mut out = FormalPoly::zero();
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * c);
        }
        out
    }

    pub fn scale_int(&self, c: i64) -> FormalPoly {
        self.scale(&BigRational::from_integer(c.into()))
    }

    pub fn mul(&self, other: &FormalPoly) -> FormalPoly {
        let mut out = FormalPoly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    /// Applies a linear operator defined on variables. Fails on non-linear terms.
    pub fn apply_linear(&self, op: impl Fn(Var) -> FormalPoly) -> Result<FormalPoly> {
        let mut out = FormalPoly::zero();
        for (m, c) in &self.terms {
            match m.factors() {
                [] => {}
                [(v, 1)] => out = out.add(&op(*v).scale(c)),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "linear operator applied to a degree-{} monomial",
                        m.degree()
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Substitutes each variable by a polynomial.
    pub fn substitute(&self, sub: impl Fn(Var) -> FormalPoly) -> FormalPoly {
        let mut out = FormalPoly::zero();
        for (m, c) in &self.terms {
            let mut t = FormalPoly::constant(c.clone());
            for &(v, e) in m.factors() {
                let s = sub(v);
                for _ in 0..e {
                    t = t.mul(&s);
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Evaluates with a rational assignment of the variables.
    pub fn eval(&self, value: impl Fn(Var) -> BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for &(v, e) in m.factors() {
                let x = value(v);
                for _ in 0..e {
                    t *= &x;
                }
            }
            acc += t;
        }
        acc
    }
}

impl fmt::Display for FormalPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})")?;
            for (v, e) in m.factors() {
                if *e == 1 {
                    write!(f, "*{v}")?;
                } else {
                    write!(f, "*{v}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_binomial() {
        let x = FormalPoly::var(Var::W(0));
        let y = FormalPoly::var(Var::W(1));
        let s = x.add(&y);
        let lhs = s.mul(&s);
        let rhs = x.mul(&x).add(&x.mul(&y).scale_int(2)).add(&y.mul(&y));
        assert!(lhs.sub(&rhs).is_zero());
        assert_eq!(lhs.num_terms(), 3);
    }

    #[test]
    fn linear_operator_rejects_products() {
        let x = FormalPoly::var(Var::W(0));
        assert!(x.mul(&x).apply_linear(|_| FormalPoly::int(1)).is_err());
        let r = x.scale_int(3).add(&FormalPoly::int(5)).apply_linear(|_| FormalPoly::int(2)).unwrap();
        assert_eq!(r, FormalPoly::int(6));
    }
}
