use super::Experiment;
use crate::config::ExperimentConfig;
use crate::report::{Report, Row};
use anyhow::{bail, Result};
use exitmeasure::partitions::{
    alternating_interval_sum, bell_number, check_event_identities, check_product_expansion, enumerate_partitions,
    formal_pde_identity, moment_sequence, random_event_identities, random_rational, u_to_v, v_to_u, IdentityVariant,
    SubsetId,
};
use exitmeasure::rng::{stream, tag};
use num_rational::BigRational;
use std::collections::BTreeMap;

pub struct VerifyIdentities;

const CRITERION: &str = "exact-combinatorics";

/// Bell numbers as row sums of Stirling numbers of the second kind.
fn bell_by_stirling(n_max: usize) -> Vec<u128> {
    let mut s = vec![vec![0u128; n_max + 1]; n_max + 1];
    s[0][0] = 1;
    for n in 1..=n_max {
        for k in 1..=n {
            s[n][k] = k as u128 * s[n - 1][k] + s[n - 1][k - 1];
        }
    }
    s.iter().map(|row| row.iter().sum()).collect()
}

/// `x_1 = c_1`, `x_n = 2c_1 Σ_{j=1}^{n-1} C(n,j) x_{n-j} x_j`.
fn moments_by_recursion(c1: &BigRational, n_max: usize) -> Vec<BigRational> {
    let mut x = vec![c1.clone()];
    for n in 2..=n_max {
        let mut acc = BigRational::from_integer(0.into());
        let mut binom: u64 = 1;
        for j in 1..n {
            binom = binom * (n - j + 1) as u64 / j as u64;
            acc += BigRational::from_integer(binom.into()) * &x[n - j - 1] * &x[j - 1];
        }
        x.push(BigRational::from_integer(2.into()) * c1 * acc);
    }
    x
}

impl Experiment for VerifyIdentities {
    fn name(&self) -> &'static str {
        "verify-identities"
    }

    fn about(&self) -> &'static str {
        "Exact partition identities, formal semilinear identities and the moment sequence, in rational arithmetic"
    }

    fn defaults(&self) -> ExperimentConfig {
        ExperimentConfig { n: 5, ..Default::default() }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Report> {
        if !(1..=6).contains(&cfg.n) {
            bail!("verify-identities supports n in 1..=6, got {}", cfg.n);
        }
        let mut rep = Report::new(self.name(), cfg);
        rep.criteria.push(CRITERION.into());
        let c = |s: &str| format!("{CRITERION}/{s}");
        let mut rng = stream(cfg.seed, tag("verify-identities"), 0);

        let bell = bell_by_stirling(8);
        for m in 1..=8 {
            let count = enumerate_partitions(SubsetId::full(m)?)?.len() as u128;
            rep.push(Row::flag(&c("bell-count"), format!("n={m}"), count == bell[m] && bell_number(m) == bell[m]).with_stat(count as f64));
        }

        for m in 1..=cfg.n {
            let full = SubsetId::full(m)?;
            let mut ok = true;
            for cc in full.subsets() {
                for a in cc.subsets() {
                    let expected = if a == cc { if cc.len() % 2 == 0 { 1 } else { -1 } } else { 0 };
                    ok &= alternating_interval_sum(a, cc)? == expected;
                }
            }
            rep.push(Row::flag(&c("alternating-sum"), format!("n={m}"), ok));

            let w: BTreeMap<usize, BigRational> = (1..=m).map(|i| (i, random_rational(&mut rng))).collect();
            rep.push(Row::flag(&c("product-expansion"), format!("n={m}"), check_product_expansion(full, &w)?));

            let u: BTreeMap<SubsetId, BigRational> =
                full.nonempty_subsets().into_iter().map(|b| (b, random_rational(&mut rng))).collect();
            let v = u_to_v(&u)?;
            let mut ok = v_to_u(&v)? == u;
            for a in full.nonempty_subsets() {
                let direct = a.nonempty_subsets().into_iter().fold(BigRational::from_integer(0.into()), |acc, b| {
                    if b.len() % 2 == 1 {
                        acc + &u[&b]
                    } else {
                        acc - &u[&b]
                    }
                });
                ok &= v[&a] == direct;
            }
            rep.push(Row::flag(&c("hit-all-from-hit-any"), format!("n={m}"), ok));

            let e = check_event_identities(m)?;
            let r = random_event_identities(m, 200, &mut rng)?;
            rep.push(Row::flag(&c("indicator-identities"), format!("n={m}"), e.pass && r.pass).with_stat((e.failures + r.failures) as f64));

            for (variant, name) in [(IdentityVariant::HitEach, "semilinear-hit-each"), (IdentityVariant::HitEachMissRest, "semilinear-hit-each-miss-rest")] {
                let f = formal_pde_identity(m, variant)?;
                rep.push(Row::flag(&c(name), format!("n={m}"), f.pass).with_stat(f.subsets_checked as f64));
            }
        }

        for (p, q) in [(1i64, 1i64), (1, 3), (5, 2)] {
            let c1 = BigRational::new(p.into(), q.into());
            let oracle = moments_by_recursion(&c1, 20);
            let ok = moment_sequence(c1.clone(), 20).map(|s| s.terms == oracle).unwrap_or(false);
            rep.push(Row::flag(&c("moment-closed-form"), format!("c1={c1} n<=20"), ok));
        }
        Ok(rep)
    }
}
