//! Exact verification of the inclusion-exclusion identities and of the formal
//! semilinear equations satisfied by the hitting fields `v^A`.

use super::poly::{FormalPoly, Var};
use super::{enumerate_cover_pairs, SubsetId};
use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// `Σ_{A⊆B⊆C} (-1)^{|B|}`.
pub fn alternating_interval_sum(a: SubsetId, c: SubsetId) -> Result<i64> {
    if !a.is_subset_of(c) {
        return Err(Error::NotSubset(format!("{a} not contained in {c}")));
    }
    let free = c.difference(a);
    Ok(free
        .subsets()
        .into_iter()
        .map(|s| if (a.len() + s.len()).is_multiple_of(2) { 1 } else { -1 })
        .sum())
}

/// Checks `Π_{i∈A}(1-w_i) = 1 + Σ_{∅≠C⊆A} (-1)^{|C|} Π_{i∈C} w_i`.
///
/// The identity is checked as a polynomial in formal variables `w_i` and then
/// numerically at the supplied rational point, which must give one value per
/// element of `a`.
pub fn check_product_expansion(a: SubsetId, w: &BTreeMap<usize, BigRational>) -> Result<bool> {
    for i in a.elems() {
        if !w.contains_key(&i) {
            return Err(Error::InvalidParameter(format!("missing w_{i}")));
        }
    }
    let wvar = |i: usize| FormalPoly::var(Var::W(i as u8));
    let mut lhs = FormalPoly::int(1);
    for i in a.elems() {
        lhs = lhs.mul(&FormalPoly::int(1).sub(&wvar(i)));
    }
    let mut rhs = FormalPoly::int(1);
    for c in a.nonempty_subsets() {
        let mut t = FormalPoly::int(if c.len() % 2 == 0 { 1 } else { -1 });
        for i in c.elems() {
            t = t.mul(&wvar(i));
        }
        rhs = rhs.add(&t);
    }
    let formal_ok = lhs.sub(&rhs).is_zero();
    let value = |v: Var| match v {
        Var::W(i) => w[&(i as usize)].clone(),
        _ => BigRational::zero(),
    };
    Ok(formal_ok && lhs.eval(value) == rhs.eval(value))
}

/// `v^A = -Σ_{∅≠B⊆A} (-1)^{|B|} u^B` for every nonempty `A` in the input map.
pub fn u_to_v(u: &BTreeMap<SubsetId, BigRational>) -> Result<BTreeMap<SubsetId, BigRational>> {
    mobius_flip(u)
}

/// The inverse map, given by the same formula with the roles exchanged.
pub fn v_to_u(v: &BTreeMap<SubsetId, BigRational>) -> Result<BTreeMap<SubsetId, BigRational>> {
    mobius_flip(v)
}

fn mobius_flip(x: &BTreeMap<SubsetId, BigRational>) -> Result<BTreeMap<SubsetId, BigRational>> {
    let mut out = BTreeMap::new();
    for &a in x.keys() {
        if a.is_empty() {
            return Err(Error::InvalidSubset("empty subset key".into()));
        }
        let mut acc = BigRational::zero();
        for b in a.nonempty_subsets() {
            let xb = x
                .get(&b)
                .ok_or_else(|| Error::InvalidParameter(format!("missing value for subset {b}")))?;
            if b.len() % 2 == 0 {
                acc -= xb;
            } else {
                acc += xb;
            }
        }
        out.insert(a, acc);
    }
    Ok(out)
}

/// Which semilinear system to verify.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IdentityVariant {
    /// Fields for hitting every target, with no constraint off the targets.
    HitEach,
    /// Fields for hitting every target while missing the rest of the boundary.
    HitEachMissRest,
}

/// Outcome of a formal identity check.
#[derive(Clone, Debug, Serialize)]
pub struct PdeIdentityReport {
    pub n: usize,
    pub variant: IdentityVariant,
    pub subsets_checked: usize,
    /// Number of nonzero monomials left in each residual, per subset and form.
    pub residual_terms: Vec<(String, usize, usize)>,
    pub pass: bool,
}

fn sign(k: usize) -> i64 {
    if k.is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Verifies the semilinear equation for `v^A` as an exact polynomial identity.
///
/// The Laplacian acts formally: it is linear, and on the basic solution
/// variables it is `Δw ↦ 4w²` (so `½Δw = 2w²`). For `HitEach` the basic
/// variables are `u^B`, and `v^A = -Σ(-1)^{|B|}u^B`. For `HitEachMissRest`
/// they are `u` and `u_B`, with `u^B = u - u_B` and `v^A = Σ(-1)^{|A|+|B|}u^B`.
/// Both stated forms of the right-hand side are checked.
pub fn formal_pde_identity(n: usize, variant: IdentityVariant) -> Result<PdeIdentityReport> {
    if !(1..=6).contains(&n) {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..=6")));
    }
    let full = SubsetId::full(n)?;
    let subsets = full.nonempty_subsets();
    let upper = |b: SubsetId| -> FormalPoly {
        match variant {
            IdentityVariant::HitEach => FormalPoly::var(Var::Upper(b)),
            IdentityVariant::HitEachMissRest => {
                FormalPoly::var(Var::Total).sub(&FormalPoly::var(Var::Lower(b)))
            }
        }
    };
    let mut v: BTreeMap<SubsetId, FormalPoly> = BTreeMap::new();
    for &a in &subsets {
        let mut acc = FormalPoly::zero();
        for b in a.nonempty_subsets() {
            let coeff = match variant {
                IdentityVariant::HitEach => -sign(b.len()),
                IdentityVariant::HitEachMissRest => sign(a.len() + b.len()),
            };
            acc = acc.add(&upper(b).scale_int(coeff));
        }
        v.insert(a, acc);
    }
    let half_laplacian = |w: Var| -> FormalPoly {
        let x = FormalPoly::var(w);
        x.mul(&x).scale_int(2)
    };
    let total = FormalPoly::var(Var::Total);
    let mut residual_terms = Vec::new();
    let mut pass = true;
    for &a in &subsets {
        let lhs = v[&a].apply_linear(half_laplacian)?;
        let (first, second) = match variant {
            IdentityVariant::HitEach => {
                let mut s_all = FormalPoly::zero();
                let mut s_proper = FormalPoly::zero();
                for (b, c, par) in enumerate_cover_pairs(a, false) {
                    let t = v[&b].mul(&v[&c]).scale_int(par.sign());
                    if b != a && c != a {
                        s_proper = s_proper.add(&t);
                    }
                    s_all = s_all.add(&t);
                }
                let first = s_all.scale_int(-2);
                let inner = upper(a).scale_int(2).add(&v[&a].scale_int(sign(a.len())));
                let second = inner.mul(&v[&a]).sub(&s_proper).scale_int(2);
                (first, second)
            }
            IdentityVariant::HitEachMissRest => {
                let mut s_all = FormalPoly::zero();
                let mut s_proper = FormalPoly::zero();
                for (b, c, _) in enumerate_cover_pairs(a, false) {
                    let t = v[&b].mul(&v[&c]);
                    if b != a && c != a {
                        s_proper = s_proper.add(&t);
                    }
                    s_all = s_all.add(&t);
                }
                let first = total.mul(&v[&a]).scale_int(4).sub(&s_all.scale_int(2));
                let u_lower = total.sub(&upper(a));
                let inner = u_lower.scale_int(2).add(&v[&a]);
                let second = inner.mul(&v[&a]).sub(&s_proper).scale_int(2);
                (first, second)
            }
        };
        let r1 = lhs.sub(&first);
        let r2 = lhs.sub(&second);
        pass &= r1.is_zero() && r2.is_zero();
        residual_terms.push((a.to_string(), r1.num_terms(), r2.num_terms()));
    }
    Ok(PdeIdentityReport { n, variant, subsets_checked: subsets.len(), residual_terms, pass })
}

/// Outcome of the indicator identity checks.
#[derive(Clone, Debug, Serialize)]
pub struct EventIdentityReport {
    pub n: usize,
    pub outcomes_checked: usize,
    pub failures: usize,
    pub pass: bool,
}

/// A synthetic outcome: which targets were charged and whether the rest of the boundary was.
#[derive(Clone, Copy, Debug)]
struct Outcome {
    hit: SubsetId,
    rest: bool,
}

impl Outcome {
    fn hits_boundary(self) -> bool {
        !self.hit.is_empty() || self.rest
    }
    fn upper(self, a: SubsetId) -> bool {
        !self.hit.intersection(a).is_empty() && self.hit.is_subset_of(a) && !self.rest
    }
    fn lower(self, a: SubsetId) -> bool {
        !self.hit.difference(a).is_empty() || self.rest
    }
    fn v(self, a: SubsetId) -> bool {
        self.hit == a && !self.rest
    }
}

fn ind(b: bool) -> i64 {
    b as i64
}

fn outcome_ok(o: Outcome, n: usize) -> Result<bool> {
    let full = SubsetId::full(n)?;
    for a in full.nonempty_subsets() {
        let parts: Vec<bool> = a.nonempty_subsets().into_iter().map(|b| o.v(b)).collect();
        let disjoint = parts.iter().filter(|&&x| x).count() <= 1;
        let sum_v: i64 = parts.iter().map(|&x| ind(x)).sum();
        let a_ok = disjoint && ind(o.upper(a)) == sum_v;
        let b_ok = ind(o.upper(a)) == ind(o.hits_boundary()) - ind(o.lower(a));
        let c_sum: i64 =
            a.nonempty_subsets().into_iter().map(|b| sign(a.len() + b.len()) * ind(o.upper(b))).sum();
        let c_ok = ind(o.v(a)) == c_sum;
        if !(a_ok && b_ok && c_ok) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exhaustive check of the indicator identities over all `2^n · 2` outcome labels.
pub fn check_event_identities(n: usize) -> Result<EventIdentityReport> {
    if !(1..=6).contains(&n) {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..=6")));
    }
    let full = SubsetId::full(n)?;
    let mut checked = 0;
    let mut failures = 0;
    for hit in full.subsets() {
        for rest in [false, true] {
            checked += 1;
            if !outcome_ok(Outcome { hit, rest }, n)? {
                failures += 1;
            }
        }
    }
    Ok(EventIdentityReport { n, outcomes_checked: checked, failures, pass: failures == 0 })
}

/// Random finite sample spaces with rational outcome weights.
///
/// Each trial draws up to 16 labeled outcomes and checks the identities both
/// outcome by outcome and for the induced measures `u^A = Σ_{∅≠B⊆A} v^B`.
pub fn random_event_identities<R: Rng + ?Sized>(
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<EventIdentityReport> {
    if !(1..=6).contains(&n) {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..=6")));
    }
    let full = SubsetId::full(n)?;
    let mut checked = 0;
    let mut failures = 0;
    for _ in 0..trials {
        let k = rng.random_range(1..=16);
        let space: Vec<(Outcome, BigRational)> = (0..k)
            .map(|_| {
                let hit = SubsetId::from_bits(rng.random_range(0..(1u32 << n)) as u16, n).unwrap();
                let rest = rng.random_bool(0.5);
                let w = BigRational::new(BigInt::from(rng.random_range(1..100)), BigInt::from(rng.random_range(1..100)));
                (Outcome { hit, rest }, w)
            })
            .collect();
        let mut ok = true;
        for (o, _) in &space {
            checked += 1;
            ok &= outcome_ok(*o, n)?;
        }
        let measure = |f: &dyn Fn(Outcome) -> bool| -> BigRational {
            space.iter().filter(|(o, _)| f(*o)).fold(BigRational::zero(), |acc, (_, w)| acc + w)
        };
        for a in full.nonempty_subsets() {
            let ua = measure(&|o| o.upper(a));
            let sum_v = a
                .nonempty_subsets()
                .into_iter()
                .fold(BigRational::zero(), |acc, b| acc + measure(&|o| o.v(b)));
            ok &= ua == sum_v;
        }
        if !ok {
            failures += 1;
        }
    }
    Ok(EventIdentityReport { n, outcomes_checked: checked, failures, pass: failures == 0 })
}

/// A random rational `p/q` with `|p| < 50`, `0 < q < 50`.
pub fn random_rational<R: Rng + ?Sized>(rng: &mut R) -> BigRational {
    BigRational::new(BigInt::from(rng.random_range(-49..50)), BigInt::from(rng.random_range(1..50)))
}
