//! Invariant suite run by `stabcv validate`.
//!
//! Each check draws synthetic inputs from its own stream and compares the
//! library against an oracle computed here from first principles.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::comparators::{hochberg_rejections, holm_rejections};
use crate::cv::{make_folds, pooled_target, run_folds, Targeting};
use crate::data::TrialDataset;
use crate::dgp::{
    gen_study1, gen_study2, Study1Config, Study2Config, Study2Params, Study2Scenario,
};
use crate::error::Result;
use crate::harness::{run_scenario, ScenarioConfig, Study};
use crate::rng::{stream, Purpose, Streams};
use crate::tmle::{estimate_all_endpoints, tmle_ate};
use crate::weights::{
    optimize_weights, pvalue_from_draws, stabilize, supremum_null_draws, supremum_null_pvalue,
    StabilizationConfig, WeightVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: char,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn(u64) -> Result<(bool, String)>;

const CHECKS: [(char, &str, CheckFn); 8] = [
    ('a', "AIPW equivalence of endpoint TMLE", aipw_equivalence),
    (
        'b',
        "cross-validated EIC mean zero after pooled targeting",
        cv_score_equation,
    ),
    (
        'c',
        "simplex optimizer matches grid oracle",
        optimizer_vs_grid,
    ),
    (
        'd',
        "stabilization truncation and convexity",
        stabilization_rule,
    ),
    (
        'e',
        "supremum p-value monotone and super-uniform",
        supremum_pvalue,
    ),
    (
        'f',
        "Hochberg rejects whatever Holm rejects",
        hochberg_contains_holm,
    ),
    (
        'g',
        "Study 2 truncation boxes and balanced arms",
        study2_support,
    ),
    (
        'h',
        "reports identical across worker counts",
        worker_determinism,
    ),
];

/// Runs the full suite. A check that errors counts as failed.
pub fn run_validation(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(id, name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f(seed) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                id,
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn random_study1<R: Rng>(rng: &mut R, tag: u64, seed: u64) -> Result<TrialDataset> {
    let n = rng.random_range(20..=200);
    let beta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let cfg = Study1Config::new(n, beta)?;
    Ok(gen_study1(&cfg, &mut stream(seed, tag, Purpose::Data))?.dataset)
}

/// Least squares by normal equations on `[1, W, A]`.
fn ols_oracle(data: &TrialDataset, endpoint: usize) -> DVector<f64> {
    let (n, d) = (data.n(), data.d());
    let x = DMatrix::from_fn(n, d + 2, |i, j| match j {
        0 => 1.0,
        j if j <= d => data.covariates()[(i, j - 1)],
        _ => f64::from(data.arm()[i]),
    });
    let y = data.outcomes().column(endpoint).into_owned();
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    xtx.lu().solve(&xty).expect("full-rank design")
}

fn aipw_equivalence(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xa));
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let data = random_study1(&mut rng, t, seed)?;
        let (n, d) = (data.n(), data.d());
        let g = data.propensity();
        for k in 0..data.k() {
            let b = ols_oracle(&data, k);
            let mut sum = 0.0;
            for i in 0..n {
                let base: f64 = b[0]
                    + (0..d)
                        .map(|j| b[j + 1] * data.covariates()[(i, j)])
                        .sum::<f64>();
                let (q0, q1) = (base, base + b[d + 1]);
                let a = data.arm()[i];
                let (qa, h) = if a == 1 {
                    (q1, 1.0 / g)
                } else {
                    (q0, -1.0 / (1.0 - g))
                };
                sum += q1 - q0 + h * (data.outcomes()[(i, k)] - qa);
            }
            let aipw = sum / n as f64;
            worst = worst.max((tmle_ate(&data, k)?.psi - aipw).abs());
        }
    }
    Ok((worst <= 1e-10, format!("max |TMLE - AIPW| = {worst:.2e}")))
}

fn cv_score_equation(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xb));
    let stab = StabilizationConfig::new(WeightVector::reference(2), 0.25, 1000)?;
    let mut worst: f64 = 0.0;
    for t in 0..30 {
        let data = random_study1(&mut rng, t, seed)?;
        let streams = Streams::new(seed, t);
        let plan = make_folds(data.n(), 5, &mut streams.get(Purpose::Folds))?;
        let folds = run_folds(&data, &plan, &stab, &streams)?;
        let target = pooled_target(&folds, &data, Targeting::Pooled)?;
        let ic = &target.ic_cv;
        let n = ic.len() as f64;
        let mean = ic.sum() / n;
        let sd = (ic.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max(mean.abs() / sd.max(f64::MIN_POSITIVE));
    }
    Ok((worst <= 1e-8, format!("max |mean EIC| / SD = {worst:.2e}")))
}

fn random_spd<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(k, k) * 0.05
}

fn optimizer_vs_grid(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xc));
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let rho = random_spd(&mut rng, 2);
        let psi = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let (alpha, _) = optimize_weights(&psi, &rho)?;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for step in 0..=10_000 {
            let a = step as f64 * 1e-4;
            let (w1, w2) = (a, 1.0 - a);
            let num = w1 * psi[0] + w2 * psi[1];
            let var = w1 * w1 * rho[(0, 0)] + 2.0 * w1 * w2 * rho[(0, 1)] + w2 * w2 * rho[(1, 1)];
            let ratio = num / var.sqrt();
            if ratio > best.0 {
                best = (ratio, a);
            }
        }
        worst = worst.max((alpha.get(0) - best.1).abs());
    }
    Ok((worst <= 1e-3, format!("max coordinate gap = {worst:.2e}")))
}

fn stabilization_rule(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xd));
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let k = rng.random_range(2..=5);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let adapt = WeightVector::normalized(raw)?;
        let c = rng.random_range(0.01..3.0);
        let n = rng.random_range(2..10_000);
        let p: f64 = rng.random_range(1e-4..=1.0);
        let cfg = StabilizationConfig::new(WeightVector::reference(k), c, 1000)?;
        let stab = stabilize(&adapt, p, n, &cfg)?;
        let lambda = (c * (n as f64).ln() * p).min(1.0);
        if lambda >= 1.0 {
            ok &= stab == *cfg.alpha_ref();
        } else {
            for j in 0..k {
                let expected = (1.0 - lambda) * adapt.get(j) + lambda / k as f64;
                worst = worst.max((stab.get(j) - expected).abs());
                let (lo, hi) = (
                    adapt.get(j).min(1.0 / k as f64),
                    adapt.get(j).max(1.0 / k as f64),
                );
                ok &= stab.get(j) >= lo - 1e-15 && stab.get(j) <= hi + 1e-15;
            }
        }
    }
    ok &= worst <= 1e-12;
    Ok((
        ok,
        format!("max deviation from convex combination = {worst:.2e}"),
    ))
}

fn supremum_pvalue(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xe));
    let alpha_ref = WeightVector::reference(2);
    let mut monotone = true;
    for t in 0..20 {
        let rho = random_spd(&mut rng, 2);
        let draws = supremum_null_draws(
            &rho,
            1000,
            &alpha_ref,
            &mut stream(seed, t, Purpose::Custom(0xe1)),
        )?;
        let mut last = 1.0;
        for step in 0..=80 {
            let p = pvalue_from_draws(-2.0 + 0.1 * step as f64, &draws);
            monotone &= p <= last;
            last = p;
        }
    }

    // point-null data: training-style p-values from full-sample estimates
    let reps = 400;
    let cfg = StabilizationConfig::new(alpha_ref, 0.25, 1000)?;
    let sim = Study1Config::new(100, [0.0, 0.0])?;
    let mut pvals = Vec::with_capacity(reps);
    for r in 0..reps as u64 {
        let data = gen_study1(&sim, &mut stream(seed, r, Purpose::Custom(0xe2)))?.dataset;
        let est = estimate_all_endpoints(&data)?;
        let (_, ratio) = optimize_weights(&est.psi, &est.rho)?;
        let t_star = (data.n() as f64).sqrt() * ratio;
        pvals.push(supremum_null_pvalue(
            t_star,
            &est.rho,
            &cfg,
            &mut stream(seed, r, Purpose::Custom(0xe3)),
        )?);
    }
    let mut uniform = true;
    let mut detail = String::new();
    for u in [0.05, 0.1, 0.25, 0.5] {
        let frac = pvals.iter().filter(|&&p| p <= u).count() as f64 / reps as f64;
        let slack = 3.0 * (u * (1.0 - u) / reps as f64).sqrt();
        uniform &= frac <= u + slack;
        detail.push_str(&format!("P(p<={u})={frac:.3} "));
    }
    Ok((
        monotone && uniform,
        format!("monotone={monotone}; {}", detail.trim_end()),
    ))
}

fn hochberg_contains_holm(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, 0, Purpose::Custom(0xf));
    let mut violations = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        let p: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.2) {
                    (rng.random_range(0..10) as f64) / 100.0
                } else {
                    rng.random::<f64>().powi(3)
                }
            })
            .collect();
        let gamma = [0.01, 0.025, 0.05, 0.1][rng.random_range(0..4)];
        if hochberg_rejections(&p, gamma) < holm_rejections(&p, gamma) {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in 10000 vectors"),
    ))
}

fn study2_support(seed: u64) -> Result<(bool, String)> {
    let params = Study2Params::default();
    let mut bad = 0;
    let mut draws = 0;
    for scenario in Study2Scenario::ALL {
        let cfg = Study2Config::new(60, scenario)?;
        for r in 0..200 {
            let g = gen_study2(&cfg, &mut stream(seed, r, Purpose::Custom(0x10)))?;
            let b = g.baseline.expect("study 2 has baselines");
            let walk_ok = b
                .column(0)
                .iter()
                .all(|&x| x >= params.walk_box.0 && x <= params.walk_box.1);
            let fvc_ok = b
                .column(1)
                .iter()
                .all(|&x| x >= params.fvc_box.0 && x < params.fvc_box.1);
            if !(walk_ok && fvc_ok && g.dataset.n_treated() * 2 == g.dataset.n()) {
                bad += 1;
            }
            draws += 1;
        }
    }
    Ok((
        bad == 0,
        format!("{bad} of {draws} draws out of support or unbalanced"),
    ))
}

fn worker_determinism(seed: u64) -> Result<(bool, String)> {
    let mut reports = Vec::new();
    for jobs in [1, 2, 4] {
        let mut cfg = ScenarioConfig::preset(Study::Study1, "S3")?;
        cfg.base_seed = seed;
        cfg.replications = 16;
        cfg.mc_draws = 1000;
        cfg.n_perm = 500;
        cfg.jobs = jobs;
        cfg.keep_records = true;
        let mut r = run_scenario(&cfg)?;
        r.wall_clock_secs = 0.0;
        reports.push(r);
    }
    let same = reports.windows(2).all(|w| w[0] == w[1]);
    Ok((same, "jobs = 1, 2, 4".to_string()))
}
