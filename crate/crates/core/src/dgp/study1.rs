use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::GeneratedTrial;
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::stats::expit;

/// Linear two-endpoint design with one discrete-uniform and one binary
/// covariate and Bernoulli(1/2) treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Study1Config {
    pub n: usize,
    /// Treatment effects `(β_A1, β_A2)`.
    pub beta_a: [f64; 2],
    pub beta_w1: [f64; 2],
    pub beta_w2: [f64; 2],
    pub intercept: f64,
    pub noise_sd: f64,
}

/// The four treatment-effect configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Study1Scenario {
    /// Global null.
    S1,
    /// Strong effect on the first endpoint only.
    S2,
    /// Equal moderate effects.
    S3,
    /// Asymmetric effects.
    S4,
}

impl Study1Scenario {
    pub const ALL: [Study1Scenario; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];

    pub fn beta_a(self) -> [f64; 2] {
        match self {
            Self::S1 => [0.0, 0.0],
            Self::S2 => [1.0, 0.0],
            Self::S3 => [0.5, 0.5],
            Self::S4 => [0.8, 0.2],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::S1 => "S1 (Type I error)",
            Self::S2 => "S2 (Strong Y1)",
            Self::S3 => "S3 (Equal)",
            Self::S4 => "S4 (Asymmetric)",
        }
    }
}

impl fmt::Display for Study1Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Study1Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Self::S1),
            "S2" => Ok(Self::S2),
            "S3" => Ok(Self::S3),
            "S4" => Ok(Self::S4),
            _ => Err(Error::Config(format!(
                "unknown study1 scenario `{s}` (valid: S1, S2, S3, S4)"
            ))),
        }
    }
}

impl Study1Config {
    pub fn new(n: usize, beta_a: [f64; 2]) -> Result<Self> {
        if n < 10 {
            return Err(Error::Config(format!("study 1 needs n >= 10, got {n}")));
        }
        Ok(Self {
            n,
            beta_a,
            beta_w1: [-0.1, -0.05],
            beta_w2: [0.6, 0.3],
            intercept: 1.0,
            noise_sd: 1.0,
        })
    }

    pub fn scenario(n: usize, scenario: Study1Scenario) -> Result<Self> {
        Self::new(n, scenario.beta_a())
    }
}

/// Draws one Study 1 trial.
///
/// Per subject, in order: `W1 ~ Uniform{5..18}`, `W2 ~ Bernoulli(expit(0.3))`,
/// `A ~ Bernoulli(0.5)`, then one standard normal error per endpoint.
pub fn gen_study1<R: Rng + ?Sized>(cfg: &Study1Config, rng: &mut R) -> Result<GeneratedTrial> {
    let n = cfg.n;
    let p_w2 = expit(0.3);
    let mut w = DMatrix::zeros(n, 2);
    let mut y = DMatrix::zeros(n, 2);
    let mut arm = Vec::with_capacity(n);
    for i in 0..n {
        let w1 = f64::from(rng.random_range(5u32..=18));
        let w2 = if rng.random_bool(p_w2) { 1.0 } else { 0.0 };
        let a = u8::from(rng.random_bool(0.5));
        w[(i, 0)] = w1;
        w[(i, 1)] = w2;
        arm.push(a);
        for k in 0..2 {
            let eps: f64 = rng.sample(StandardNormal);
            y[(i, k)] = cfg.intercept
                + cfg.beta_a[k] * f64::from(a)
                + cfg.beta_w1[k] * w1
                + cfg.beta_w2[k] * w2
                + cfg.noise_sd * eps;
        }
    }
    Ok(GeneratedTrial {
        dataset: TrialDataset::new(w, arm, y, 0.5)?,
        truth: DVector::from_column_slice(&cfg.beta_a),
        baseline: None,
    })
}
