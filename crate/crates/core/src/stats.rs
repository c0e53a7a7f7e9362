//! Estimators over independent replicas: means, joint cumulants, smooth
//! functions of means, and their standard errors.
//!
//! Standard errors of nonlinear statistics use a grouped jackknife over
//! contiguous blocks of replica ids, which keeps them deterministic.

use crate::partitions::{enumerate_partitions, SubsetId};
use serde::{Deserialize, Serialize};

/// Number of jackknife groups used by default.
pub const JACKKNIFE_GROUPS: usize = 100;

/// How an estimate was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Cumulant,
    PalmRecursion,
    Direct,
    Quadrature,
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub value: f64,
    pub se: f64,
    pub replicas: usize,
    pub kind: EstimatorKind,
}

impl EstimatorResult {
    pub fn new(value: f64, se: f64, replicas: usize, kind: EstimatorKind) -> Self {
        EstimatorResult { value, se, replicas, kind }
    }

    /// An exact value with zero error.
    pub fn exact(value: f64, kind: EstimatorKind) -> Self {
        EstimatorResult { value, se: 0.0, replicas: 0, kind }
    }

    /// `(self - other) / sqrt(se² + se_other²)`; zero when both are exact and equal.
    pub fn z_against(&self, other: &EstimatorResult) -> f64 {
        z_score(self.value, self.se, other.value, other.se)
    }

    /// `(self - target) / se` against an exact target.
    pub fn z_against_value(&self, target: f64) -> f64 {
        z_score(self.value, self.se, target, 0.0)
    }
}

/// Combined z-score of two independent estimates.
pub fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let s = (se_a * se_a + se_b * se_b).sqrt();
    if s == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b) / s
    }
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Grouped jackknife for a statistic that is a function of column sums.
///
/// `row(i)` yields the summand vector for replica `i`; `stat(sums, count)`
/// maps totals over a set of replicas to the statistic. Returns the
/// full-sample statistic and its jackknife standard error.
pub fn jackknife<R, S>(n: usize, groups: usize, row: R, stat: S) -> (f64, f64)
where
    R: Fn(usize) -> Vec<f64>,
    S: Fn(&[f64], usize) -> f64,
{
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let g = groups.clamp(1, n);
    let mut group_sums: Vec<Vec<f64>> = Vec::with_capacity(g);
    let mut group_counts = Vec::with_capacity(g);
    let mut total: Vec<f64> = Vec::new();
    for gi in 0..g {
        let lo = gi * n / g;
        let hi = (gi + 1) * n / g;
        let mut s: Vec<f64> = Vec::new();
        for i in lo..hi {
            let r = row(i);
            if s.is_empty() {
                s = vec![0.0; r.len()];
            }
            for (a, b) in s.iter_mut().zip(&r) {
                *a += b;
            }
        }
        if total.is_empty() {
            total = vec![0.0; s.len()];
        }
        for (a, b) in total.iter_mut().zip(&s) {
            *a += b;
        }
        group_sums.push(s);
        group_counts.push(hi - lo);
    }
    let full = stat(&total, n);
    if g < 2 {
        return (full, f64::NAN);
    }
    let mut loo = Vec::with_capacity(g);
    for (s, c) in group_sums.iter().zip(&group_counts) {
        let rest: Vec<f64> = total.iter().zip(s).map(|(t, x)| t - x).collect();
        loo.push(stat(&rest, n - c));
    }
    let mean = loo.iter().sum::<f64>() / g as f64;
    let var = loo.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * (g - 1) as f64 / g as f64;
    (full, var.sqrt())
}

/// Joint cumulant of the listed columns (order 1 to 3), with optional tilting weights.
///
/// Unweighted estimates use the unbiased k-statistic normalizations; weighted
/// ones are plug-in cumulants of the weighted empirical law. Columns may repeat.
pub fn joint_cumulant(cols: &[&[f64]], weights: Option<&[f64]>, groups: usize) -> (f64, f64) {
    let idx: Vec<usize> = (0..cols.len()).collect();
    cumulant_sum(cols, &[idx], weights, groups)
}

/// Sum of joint cumulants `Σ_t κ(cols[t_1], ..., cols[t_m])` over the listed
/// index tuples, with one jackknife over replicas for the whole sum.
///
/// Each tuple has length 1 to 3 and may repeat indices.
pub fn cumulant_sum(cols: &[&[f64]], terms: &[Vec<usize>], weights: Option<&[f64]>, groups: usize) -> (f64, f64) {
    assert!(!cols.is_empty(), "need at least one column");
    assert!(
        terms.iter().all(|t| (1..=3).contains(&t.len()) && t.iter().all(|&i| i < cols.len())),
        "cumulant order must be 1, 2 or 3"
    );
    let n = cols[0].len();
    // Monomials: for each term, every sub-multiset given by a position mask.
    let mut offsets = Vec::with_capacity(terms.len());
    let mut width = 1;
    for t in terms {
        offsets.push(width);
        width += (1 << t.len()) - 1;
    }
    let row = |i: usize| -> Vec<f64> {
        let w = weights.map_or(1.0, |w| w[i]);
        let mut r = vec![0.0; width];
        r[0] = w;
        for (t, &off) in terms.iter().zip(&offsets) {
            for m in 1..(1usize << t.len()) {
                let mut p = w;
                for (pos, &c) in t.iter().enumerate() {
                    if m & (1 << pos) != 0 {
                        p *= cols[c][i];
                    }
                }
                r[off + m - 1] = p;
            }
        }
        r
    };
    let partitions: Vec<Vec<crate::partitions::Partition>> =
        (1..=3).map(|k| enumerate_partitions(SubsetId::full(k).unwrap()).unwrap()).collect();
    let weighted = weights.is_some();
    let stat = |s: &[f64], count: usize| -> f64 {
        let mut total = 0.0;
        for (t, &off) in terms.iter().zip(&offsets) {
            let k = t.len();
            let mu = |b: SubsetId| s[off + b.bits() as usize - 1] / s[0];
            let mut kappa = 0.0;
            for p in &partitions[k - 1] {
                let q = p.len();
                let coeff = if q % 2 == 1 { 1.0 } else { -1.0 } * factorial(q - 1);
                kappa += coeff * p.blocks().iter().map(|b| mu(*b)).product::<f64>();
            }
            if !weighted {
                let r = count as f64;
                kappa *= match k {
                    2 => r / (r - 1.0),
                    3 => r * r / ((r - 1.0) * (r - 2.0)),
                    _ => 1.0,
                };
            }
            total += kappa;
        }
        total
    };
    jackknife(n, groups, row, stat)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulant_sum_adds_terms() {
        let x = [1.0, 2.0, 4.0, 7.0, 3.0];
        let y = [0.5, -1.0, 2.0, 2.5, 0.0];
        let (a, _) = joint_cumulant(&[&x, &y], None, 5);
        let (b, _) = joint_cumulant(&[&y], None, 5);
        let (c, _) = joint_cumulant(&[&x, &x, &y], None, 5);
        let (s, se) = cumulant_sum(&[&x, &y], &[vec![0, 1], vec![1], vec![0, 0, 1]], None, 5);
        assert!((s - (a + b + c)).abs() < 1e-12);
        assert!(se.is_finite());
    }

    #[test]
    fn cumulants_of_known_sample() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let (m, _) = joint_cumulant(&[&x], None, 4);
        assert!((m - 3.5).abs() < 1e-12);
        let (v, _) = joint_cumulant(&[&x, &x], None, 4);
        let var = [1.0f64, 2.0, 4.0, 7.0].iter().map(|a| (a - 3.5) * (a - 3.5)).sum::<f64>() / 3.0;
        assert!((v - var).abs() < 1e-12);
        let (k3, _) = joint_cumulant(&[&x, &x, &x], None, 4);
        let m3 = x.iter().map(|a| (a - 3.5f64).powi(3)).sum::<f64>();
        assert!((k3 - 4.0 * m3 / (3.0 * 2.0)).abs() < 1e-10);
    }

    #[test]
    fn jackknife_of_mean_matches_classical_se() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let (m, se) = mean_se(&xs);
        let (mj, sej) = jackknife(xs.len(), xs.len(), |i| vec![xs[i]], |s, c| s[0] / c as f64);
        assert!((m - mj).abs() < 1e-9);
        assert!((se - sej).abs() / se < 1e-6);
    }
}
