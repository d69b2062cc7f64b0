//! Benchmark global tests: O'Brien OLS on TMLE estimates, the unadjusted
//! O'Brien rank-sum test with permutation inference, and Holm / Hochberg
//! applied to endpoint-specific TMLE t statistics.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{midranks, t_quantile, t_upper_tail};
use crate::tmle::EndpointEstimates;
use crate::weights::{snr, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Holm,
    Hochberg,
    ObrienOls,
    StabCvTmle,
    ObrienRankSum,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Holm,
        Method::Hochberg,
        Method::ObrienOls,
        Method::StabCvTmle,
        Method::ObrienRankSum,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Holm => "holm",
            Method::Hochberg => "hochberg",
            Method::ObrienOls => "obrien_ols",
            Method::StabCvTmle => "stab_cvtmle",
            Method::ObrienRankSum => "obrien_ranksum",
        }
    }

    /// Column header used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Holm => "Holm",
            Method::Hochberg => "Hochberg",
            Method::ObrienOls => "O'Brien",
            Method::StabCvTmle => "Stab. CV-TMLE",
            Method::ObrienRankSum => "Unadj. O'Brien",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.key() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Equal-weight composite of endpoint TMLEs with influence-curve variance,
/// referred to `t(df)`.
pub fn obrien_ols_tmle(
    est: &EndpointEstimates,
    n: usize,
    gamma: f64,
    df: usize,
) -> Result<ComparatorResult> {
    let k = est.k();
    let ratio = snr(&WeightVector::reference(k), &est.psi, &est.rho)?;
    let statistic = (n as f64).sqrt() * ratio;
    let critical = t_quantile(1.0 - gamma, df as f64);
    Ok(ComparatorResult {
        method: Method::ObrienOls,
        statistic,
        p_value: t_upper_tail(statistic, df as f64),
        reject: statistic > critical,
    })
}

/// One-sided upper-tail p-values of `t_k = √n ψ_k / √ρ_kk`.
pub fn endpoint_pvalues(est: &EndpointEstimates, n: usize, df: usize) -> Result<Vec<f64>> {
    (0..est.k())
        .map(|k| {
            let var = est.rho[(k, k)];
            if !(var > 0.0) {
                return Err(Error::DegenerateVariance(var));
            }
            let t = (n as f64).sqrt() * est.psi[k] / var.sqrt();
            Ok(t_upper_tail(t, df as f64))
        })
        .collect()
}

fn check_pvalues(pvals: &[f64]) -> Result<()> {
    if pvals.is_empty() || pvals.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(format!(
            "p-values must lie in [0, 1]: {pvals:?}"
        )));
    }
    Ok(())
}

/// Number of hypotheses Holm's step-down rejects.
pub fn holm_rejections(pvals: &[f64], gamma: f64) -> usize {
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    sorted
        .iter()
        .enumerate()
        .take_while(|(j, p)| **p <= gamma / (k - j) as f64)
        .count()
}

/// Number of hypotheses Hochberg's step-up rejects.
pub fn hochberg_rejections(pvals: &[f64], gamma: f64) -> usize {
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    (0..k)
        .rev()
        .find(|&j| sorted[j] <= gamma / (k - j) as f64)
        .map_or(0, |j| j + 1)
}

/// Holm-adjusted minimum p-value, the smallest level at which the global
/// null is rejected.
fn holm_global_p(pvals: &[f64]) -> f64 {
    let k = pvals.len() as f64;
    pvals.iter().fold(1.0f64, |m, p| m.min(p * k)).min(1.0)
}

fn hochberg_global_p(pvals: &[f64]) -> f64 {
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    sorted
        .iter()
        .enumerate()
        .map(|(j, p)| p * (k - j) as f64)
        .fold(1.0f64, f64::min)
        .min(1.0)
}

/// Global test: reject if Holm rejects any endpoint.
pub fn holm(pvals: &[f64], gamma: f64) -> Result<ComparatorResult> {
    check_pvalues(pvals)?;
    let r = holm_rejections(pvals, gamma);
    Ok(ComparatorResult {
        method: Method::Holm,
        statistic: r as f64,
        p_value: holm_global_p(pvals),
        reject: r > 0,
    })
}

/// Global test: reject if Hochberg rejects any endpoint.
pub fn hochberg(pvals: &[f64], gamma: f64) -> Result<ComparatorResult> {
    check_pvalues(pvals)?;
    let r = hochberg_rejections(pvals, gamma);
    Ok(ComparatorResult {
        method: Method::Hochberg,
        statistic: r as f64,
        p_value: hochberg_global_p(pvals),
        reject: r > 0,
    })
}

/// Per-subject sum of per-endpoint midranks over all `n` subjects.
pub fn composite_ranks(outcomes: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = outcomes.nrows();
    let mut total = vec![0.0; n];
    for col in outcomes.column_iter() {
        let ranks = midranks(col.as_slice());
        total.iter_mut().zip(ranks).for_each(|(t, r)| *t += r);
    }
    total
}

fn arm_mean_difference(score: &[f64], arm: &[u8]) -> f64 {
    let (mut s1, mut s0, mut n1) = (0.0, 0.0, 0usize);
    for (s, &a) in score.iter().zip(arm) {
        if a == 1 {
            s1 += s;
            n1 += 1;
        } else {
            s0 += s;
        }
    }
    let n0 = arm.len() - n1;
    s1 / n1 as f64 - s0 / n0 as f64
}

/// O'Brien rank-sum: composite midrank score, treated minus control mean,
/// one-sided Monte Carlo permutation p-value with the add-one rule.
pub fn obrien_ranksum<R: Rng + ?Sized>(
    outcomes: &nalgebra::DMatrix<f64>,
    arm: &[u8],
    n_perm: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<ComparatorResult> {
    if arm.len() != outcomes.nrows() {
        return Err(Error::DimensionMismatch {
            expected: outcomes.nrows(),
            got: arm.len(),
        });
    }
    let n1 = arm.iter().filter(|&&a| a == 1).count();
    if n1 == 0 || n1 == arm.len() {
        return Err(Error::InvalidData("rank-sum test needs both arms".into()));
    }
    if n_perm == 0 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    let score = composite_ranks(outcomes);
    let observed = arm_mean_difference(&score, arm);
    // relative slack so floating-point reorderings of equal sums count as ties
    let tol = 1e-9 * observed.abs().max(1.0);
    let mut labels = arm.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        labels.shuffle(rng);
        if arm_mean_difference(&score, &labels) >= observed - tol {
            hits += 1;
        }
    }
    let p_value = (1 + hits) as f64 / (n_perm + 1) as f64;
    Ok(ComparatorResult {
        method: Method::ObrienRankSum,
        statistic: observed,
        p_value,
        reject: p_value <= gamma,
    })
}
