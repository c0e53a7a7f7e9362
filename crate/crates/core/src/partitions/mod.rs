//! Exact combinatorics over subsets and set partitions of a small index set.
//!
//! Index sets are `{1, ..., n}` with `n <= 12`, stored as bitmasks. Blocks of a
//! partition are kept in the canonical order: by minimum element, then by
//! cardinality, then by bitmask.

mod identities;
mod moments;
mod poly;

pub use identities::{
    alternating_interval_sum, check_event_identities, check_product_expansion, formal_pde_identity,
    random_event_identities, random_rational, u_to_v, v_to_u, EventIdentityReport, IdentityVariant,
    PdeIdentityReport,
};
pub use moments::{moment_sequence, MomentSequence};
pub use poly::{FormalPoly, Monomial, Var};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Largest supported ground set.
pub const MAX_N: usize = 12;

/// A subset of `{1, ..., n}` encoded as a bitmask; bit `i - 1` marks element `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubsetId(u16);

impl SubsetId {
    pub const EMPTY: SubsetId = SubsetId(0);

    /// Builds a subset from a raw mask, checking it fits inside `{1..n}`.
    pub fn from_bits(bits: u16, n: usize) -> Result<Self> {
        check_n(n)?;
        if n < 16 && bits >> n != 0 {
            return Err(Error::InvalidSubset(format!("mask {bits:#b} has bits above n = {n}")));
        }
        Ok(SubsetId(bits))
    }

    /// Builds a subset from 1-based element labels.
    pub fn from_elems(elems: &[usize], n: usize) -> Result<Self> {
        check_n(n)?;
        let mut bits = 0u16;
        for &e in elems {
            if e == 0 || e > n {
                return Err(Error::InvalidSubset(format!("element {e} not in 1..={n}")));
            }
            bits |= 1 << (e - 1);
        }
        Ok(SubsetId(bits))
    }

    /// The full set `{1, ..., n}`.
    pub fn full(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(SubsetId(((1u32 << n) - 1) as u16))
    }

    pub fn singleton(i: usize, n: usize) -> Result<Self> {
        Self::from_elems(&[i], n)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        (1..=16).contains(&i) && self.0 & (1 << (i - 1)) != 0
    }

    pub fn is_subset_of(self, other: SubsetId) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: SubsetId) -> SubsetId {
        SubsetId(self.0 | other.0)
    }

    pub fn intersection(self, other: SubsetId) -> SubsetId {
        SubsetId(self.0 & other.0)
    }

    pub fn difference(self, other: SubsetId) -> SubsetId {
        SubsetId(self.0 & !other.0)
    }

    /// Smallest element, or `None` for the empty set.
    pub fn min_elem(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize + 1)
    }

    /// Elements in increasing order (1-based).
    pub fn elems(self) -> Vec<usize> {
        (0..16).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }

    /// All subsets of `self`, including the empty set and `self`, by increasing mask.
    pub fn subsets(self) -> Vec<SubsetId> {
        let mut out = Vec::with_capacity(1 << self.len());
        let mut s: u16 = 0;
        loop {
            out.push(SubsetId(s));
            if s == self.0 {
                break;
            }
            s = s.wrapping_sub(self.0) & self.0;
        }
        out
    }

    /// Nonempty subsets of `self` in canonical order.
    pub fn nonempty_subsets(self) -> Vec<SubsetId> {
        let mut v: Vec<SubsetId> = self.subsets().into_iter().filter(|s| !s.is_empty()).collect();
        v.sort_by(|a, b| canonical_cmp(*a, *b));
        v
    }

    /// Nonempty proper subsets of `self` in canonical order.
    pub fn proper_nonempty_subsets(self) -> Vec<SubsetId> {
        self.nonempty_subsets().into_iter().filter(|s| *s != self).collect()
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elems().iter().map(|e| e.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_N {
        return Err(Error::InvalidParameter(format!("ground set size {n} not in 1..={MAX_N}")));
    }
    Ok(())
}

/// Canonical order on blocks: minimum element, then cardinality, then mask.
pub fn canonical_cmp(a: SubsetId, b: SubsetId) -> Ordering {
    let ka = (a.min_elem().unwrap_or(0), a.len(), a.0);
    let kb = (b.min_elem().unwrap_or(0), b.len(), b.0);
    ka.cmp(&kb)
}

/// A set partition: disjoint nonempty blocks, canonically ordered.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<SubsetId>,
}

impl Partition {
    /// Builds a partition from blocks, validating disjointness and nonemptiness.
    pub fn new(mut blocks: Vec<SubsetId>) -> Result<Self> {
        let mut seen = 0u16;
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidSubset("empty block".into()));
            }
            if seen & b.0 != 0 {
                return Err(Error::InvalidSubset(format!("block {b} overlaps another block")));
            }
            seen |= b.0;
        }
        blocks.sort_by(|a, b| canonical_cmp(*a, *b));
        Ok(Partition { blocks })
    }

    pub fn blocks(&self) -> &[SubsetId] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Union of all blocks.
    pub fn ground(&self) -> SubsetId {
        SubsetId(self.blocks.iter().fold(0, |acc, b| acc | b.0))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// All set partitions of a nonempty `a`, each exactly once.
pub fn enumerate_partitions(a: SubsetId) -> Result<Vec<Partition>> {
    if a.is_empty() {
        return Err(Error::InvalidSubset("cannot partition the empty set".into()));
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    rec_partitions(a.0, &mut current, &mut out);
    Ok(out)
}

fn rec_partitions(rest: u16, current: &mut Vec<SubsetId>, out: &mut Vec<Partition>) {
    if rest == 0 {
        let mut blocks = current.clone();
        blocks.sort_by(|a, b| canonical_cmp(*a, *b));
        out.push(Partition { blocks });
        return;
    }
    let low = rest & rest.wrapping_neg();
    let others = rest & !low;
    let mut s: u16 = 0;
    loop {
        current.push(SubsetId(low | s));
        rec_partitions(others & !s, current, out);
        current.pop();
        if s == others {
            break;
        }
        s = s.wrapping_sub(others) & others;
    }
}

/// Restriction of a partition of a superset to `b`.
///
/// Returns `Ok(None)` when `b` is not a union of blocks, and an error when `b`
/// is not contained in the ground set of `sigma`.
pub fn restrict(sigma: &Partition, b: SubsetId) -> Result<Option<Partition>> {
    if !b.is_subset_of(sigma.ground()) {
        return Err(Error::NotSubset(format!("{b} not contained in {}", sigma.ground())));
    }
    let blocks: Vec<SubsetId> = sigma.blocks.iter().copied().filter(|c| c.is_subset_of(b)).collect();
    let cover = blocks.iter().fold(0u16, |acc, c| acc | c.0);
    if cover == b.0 {
        Ok(Some(Partition { blocks }))
    } else {
        Ok(None)
    }
}

/// Parity of the overlap of a cover pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> i64 {
        match self {
            Parity::Even => 1,
            Parity::Odd => -1,
        }
    }
}

/// Ordered pairs `(B, C)` of nonempty subsets with `B ∪ C = A`, with the parity of `|B ∩ C|`.
///
/// With `proper_only`, pairs where either side equals `A` are dropped.
pub fn enumerate_cover_pairs(a: SubsetId, proper_only: bool) -> Vec<(SubsetId, SubsetId, Parity)> {
    let subs = a.nonempty_subsets();
    let mut out = Vec::new();
    for &b in &subs {
        for &c in &subs {
            if b.union(c) != a {
                continue;
            }
            if proper_only && (b == a || c == a) {
                continue;
            }
            let parity = if b.intersection(c).len() % 2 == 0 { Parity::Even } else { Parity::Odd };
            out.push((b, c, parity));
        }
    }
    out
}

/// Bell number `B_n` via the Bell triangle.
pub fn bell_number(n: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for j in 0..row.len() {
            let v = next[j] + row[j];
            next.push(v);
        }
        row = next;
    }
    row[0]
}
