//! Two-arm rare-disease trial with walk-distance and lung-function change
//! scores, covariate-dependent means, and truncated baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::truncated::{truncated_bvn, truncated_normal};
use super::GeneratedTrial;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::stats::truncated_normal_moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(Self::Mild),
            "moderate" => Ok(Self::Moderate),
            "severe" => Ok(Self::Severe),
            _ => Err(Error::InvalidData(format!("unknown severity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    NorthAmerica,
    Europe,
    Other,
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NA" => Ok(Self::NorthAmerica),
            "EU" => Ok(Self::Europe),
            "Other" => Ok(Self::Other),
            _ => Err(Error::InvalidData(format!("unknown region `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Study2Scenario {
    /// Active arm change law equals placebo.
    GlobalNull,
    /// Active arm mean changes set to the trial-reported values.
    CalibratedAlternative,
}

impl Study2Scenario {
    pub const ALL: [Study2Scenario; 2] = [Self::GlobalNull, Self::CalibratedAlternative];

    pub fn key(self) -> &'static str {
        match self {
            Self::GlobalNull => "global_null",
            Self::CalibratedAlternative => "calibrated_alternative",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::GlobalNull => "Type I error",
            Self::CalibratedAlternative => "Power",
        }
    }
}

impl fmt::Display for Study2Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Study2Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_null" => Ok(Self::GlobalNull),
            "calibrated_alternative" => Ok(Self::CalibratedAlternative),
            _ => Err(Error::Config(format!(
                "unknown study2 scenario `{s}` (valid: global_null, calibrated_alternative)"
            ))),
        }
    }
}

/// Arm-specific law of the change scores before covariate effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeLaw {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    pub corr: f64,
}

/// Fixed constants of the Study 2 design.
#[derive(Debug, Clone, PartialEq)]
pub struct Study2Params {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_range: (f64, f64),
    /// `(NA, EU, Other)`.
    pub region_probs: [f64; 3],
    /// `(mild, moderate, severe)`.
    pub severity_probs: [f64; 3],
    pub baseline_mean: [f64; 2],
    pub baseline_sd: [f64; 2],
    pub baseline_corr: f64,
    /// Closed box for walk distance.
    pub walk_box: (f64, f64),
    /// Half-open box for lung function.
    pub fvc_box: (f64, f64),
    /// Baseline covariate effects, rows (walk, fvc) × design columns.
    pub m_baseline: [[f64; 5]; 2],
    /// Change-score covariate effects.
    pub m_change: [[f64; 5]; 2],
    pub placebo: ChangeLaw,
    pub active: ChangeLaw,
}

impl Default for Study2Params {
    fn default() -> Self {
        Self {
            age_mean: 15.0,
            age_sd: 6.0,
            age_range: (5.0, 31.0),
            region_probs: [0.40, 0.40, 0.20],
            severity_probs: [0.31, 0.38, 0.31],
            baseline_mean: [392.5, 55.45],
            baseline_sd: [107.0, 14.0],
            baseline_corr: 0.30,
            walk_box: (50.0, 650.0),
            fvc_box: (20.0, 80.0),
            m_baseline: [
                [-15.0, -60.0, -120.0, -10.0, 5.0],
                [-1.5, -6.0, -12.0, -1.5, 0.75],
            ],
            m_change: [
                [-8.0, -18.0, -40.0, -4.0, 2.0],
                [-1.0, -5.0, -10.0, -0.8, 0.5],
            ],
            placebo: ChangeLaw {
                mean: [7.0, 0.8],
                sd: [54.0, 9.6],
                corr: 0.25,
            },
            active: ChangeLaw {
                mean: [44.0, 3.4],
                sd: [70.0, 10.0],
                corr: 0.25,
            },
        }
    }
}

impl Study2Params {
    /// `E[Age]` under the truncated normal.
    pub fn age_population_mean(&self) -> f64 {
        truncated_normal_moments(
            self.age_mean,
            self.age_sd,
            self.age_range.0,
            self.age_range.1,
        )
        .0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study2Config {
    pub n: usize,
    pub scenario: Study2Scenario,
    pub params: Study2Params,
    baseline_chol: [[f64; 2]; 2],
    change_chol: [[[f64; 2]; 2]; 2],
}

fn target_cov(sd: [f64; 2], corr: f64) -> Matrix2<f64> {
    Matrix2::new(
        sd[0] * sd[0],
        corr * sd[0] * sd[1],
        corr * sd[0] * sd[1],
        sd[1] * sd[1],
    )
}

/// Lower Cholesky factor of `target - M Var(X) Mᵀ`, or a configuration error
/// naming the offending eigenvalue.
fn residual_factor(
    target: Matrix2<f64>,
    m: &[[f64; 5]; 2],
    var_x: &DMatrix<f64>,
    what: &str,
) -> Result<[[f64; 2]; 2]> {
    let mm = DMatrix::from_fn(2, 5, |r, c| m[r][c]);
    let explained = &mm * var_x * mm.transpose();
    let resid = Matrix2::new(
        target[(0, 0)] - explained[(0, 0)],
        target[(0, 1)] - explained[(0, 1)],
        target[(1, 0)] - explained[(1, 0)],
        target[(1, 1)] - explained[(1, 1)],
    );
    let min_eig = SymmetricEigen::new(resid).eigenvalues.min();
    if min_eig < 0.0 {
        return Err(Error::Config(format!(
            "{what} residual covariance is not PSD (eigenvalue {min_eig})"
        )));
    }
    let l11 = resid[(0, 0)].sqrt();
    let l21 = if l11 > 0.0 { resid[(1, 0)] / l11 } else { 0.0 };
    let l22 = (resid[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Ok([[l11, 0.0], [l21, l22]])
}

impl Study2Config {
    pub fn new(n: usize, scenario: Study2Scenario) -> Result<Self> {
        Self::with_params(n, scenario, Study2Params::default())
    }

    pub fn with_params(n: usize, scenario: Study2Scenario, params: Study2Params) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "study 2 needs an even n >= 4, got {n}"
            )));
        }
        let var_x = covariate_covariance(&params);
        let baseline_chol = residual_factor(
            target_cov(params.baseline_sd, params.baseline_corr),
            &params.m_baseline,
            &var_x,
            "baseline",
        )?;
        let active = match scenario {
            Study2Scenario::GlobalNull => params.placebo,
            Study2Scenario::CalibratedAlternative => params.active,
        };
        let mut change_chol = [[[0.0; 2]; 2]; 2];
        for (a, law) in [params.placebo, active].into_iter().enumerate() {
            change_chol[a] = residual_factor(
                target_cov(law.sd, law.corr),
                &params.m_change,
                &var_x,
                "change",
            )?;
        }
        Ok(Self {
            n,
            scenario,
            params,
            baseline_chol,
            change_chol,
        })
    }

    /// Change law for arm `a` under this scenario.
    pub fn change_law(&self, a: u8) -> ChangeLaw {
        match (a, self.scenario) {
            (0, _) | (_, Study2Scenario::GlobalNull) => self.params.placebo,
            _ => self.params.active,
        }
    }

    pub fn truth(&self) -> DVector<f64> {
        let (p, a) = (self.change_law(0), self.change_law(1));
        DVector::from_vec(vec![a.mean[0] - p.mean[0], a.mean[1] - p.mean[1]])
    }
}

/// Analytic covariance of the five design columns.
pub fn covariate_covariance(params: &Study2Params) -> DMatrix<f64> {
    let (_, age_var) = truncated_normal_moments(
        params.age_mean,
        params.age_sd,
        params.age_range.0,
        params.age_range.1,
    );
    let mut v = DMatrix::zeros(5, 5);
    v[(0, 0)] = age_var / 100.0;
    let [_, p_mod, p_sev] = params.severity_probs;
    let [_, p_eu, p_other] = params.region_probs;
    for (block, (p1, p2)) in [(1, (p_mod, p_sev)), (3, (p_eu, p_other))] {
        v[(block, block)] = p1 * (1.0 - p1);
        v[(block + 1, block + 1)] = p2 * (1.0 - p2);
        v[(block, block + 1)] = -p1 * p2;
        v[(block + 1, block)] = -p1 * p2;
    }
    v
}

/// Centered design `(age10, sev_mod, sev_sev, EU, Other)`.
pub fn centered_design(
    age: &[f64],
    severity: &[Severity],
    region: &[Region],
    params: &Study2Params,
) -> Result<DMatrix<f64>> {
    let n = age.len();
    if severity.len() != n || region.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: severity.len().min(region.len()),
        });
    }
    let age_mean = params.age_population_mean();
    let [_, p_mod, p_sev] = params.severity_probs;
    let [_, p_eu, p_other] = params.region_probs;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(DMatrix::from_fn(n, 5, |i, j| match j {
        0 => (age[i] - age_mean) / 10.0,
        1 => ind(severity[i] == Severity::Moderate) - p_mod,
        2 => ind(severity[i] == Severity::Severe) - p_sev,
        3 => ind(region[i] == Region::Europe) - p_eu,
        _ => ind(region[i] == Region::Other) - p_other,
    }))
}

fn categorical<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < probs[0] {
        0
    } else if u < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

fn linear(m: &[[f64; 5]; 2], x: &DMatrix<f64>, i: usize) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (r, row) in m.iter().enumerate() {
        out[r] = (0..5).map(|j| row[j] * x[(i, j)]).sum();
    }
    out
}

/// Draws one Study 2 trial. Outcomes are the continuous change scores;
/// covariates are the centered design.
pub fn gen_study2<R: Rng + ?Sized>(cfg: &Study2Config, rng: &mut R) -> Result<GeneratedTrial> {
    let p = &cfg.params;
    let n = cfg.n;
    let mut age = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    let mut severity = Vec::with_capacity(n);
    for _ in 0..n {
        age.push(truncated_normal(
            p.age_mean,
            p.age_sd,
            p.age_range.0,
            p.age_range.1,
            rng,
        )?);
        region.push(
            [Region::NorthAmerica, Region::Europe, Region::Other]
                [categorical(&p.region_probs, rng)],
        );
        severity.push(
            [Severity::Mild, Severity::Moderate, Severity::Severe]
                [categorical(&p.severity_probs, rng)],
        );
    }
    let x = centered_design(&age, &severity, &region, p)?;

    let mut baseline = DMatrix::zeros(n, 2);
    for i in 0..n {
        let shift = linear(&p.m_baseline, &x, i);
        let mean = [p.baseline_mean[0] + shift[0], p.baseline_mean[1] + shift[1]];
        let b = truncated_bvn(mean, cfg.baseline_chol, p.walk_box, p.fvc_box, rng)?;
        baseline[(i, 0)] = b[0];
        baseline[(i, 1)] = b[1];
    }

    let mut arm: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    arm.shuffle(rng);

    let mut change = DMatrix::zeros(n, 2);
    for i in 0..n {
        let a = arm[i];
        let law = cfg.change_law(a);
        let shift = linear(&p.m_change, &x, i);
        let l = cfg.change_chol[usize::from(a)];
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        change[(i, 0)] = law.mean[0] + shift[0] + l[0][0] * z0;
        change[(i, 1)] = law.mean[1] + shift[1] + l[1][0] * z0 + l[1][1] * z1;
    }

    Ok(GeneratedTrial {
        dataset: TrialDataset::new(x, arm, change, 0.5)?,
        truth: cfg.truth(),
        baseline: Some(baseline),
    })
}
