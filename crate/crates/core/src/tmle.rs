//! Endpoint-specific TMLE of the average treatment effect with a known
//! randomization probability.
//!
//! The initial outcome regression is ordinary least squares on
//! `[1, W, A]`. Targeting is a single linear fluctuation along the clever
//! covariate `H(A) = (2A - 1) / g(A)`, fit by least squares without an
//! intercept, which solves the efficient influence curve equation exactly.

use nalgebra::{DMatrix, DVector};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::weights::WeightVector;

/// Linear working model `Q(a, w) = b0 + w·b_w + a·b_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    /// `(intercept, covariate slopes..., treatment)`, length `d + 2`.
    pub coefficients: DVector<f64>,
}

impl OutcomeModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn treatment_effect(&self) -> f64 {
        self.coefficients[self.coefficients.len() - 1]
    }

    /// Prediction for covariate row `w` (length `d`) under arm `a`.
    pub fn predict(&self, w: &[f64], a: u8) -> f64 {
        let d = self.coefficients.len() - 2;
        debug_assert_eq!(w.len(), d);
        let mut q = self.coefficients[0];
        for (j, wj) in w.iter().enumerate() {
            q += self.coefficients[j + 1] * wj;
        }
        q + self.coefficients[d + 1] * f64::from(a)
    }
}

/// Outcome model after the fluctuation step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetedModel {
    pub initial: OutcomeModel,
    pub epsilon: f64,
    pub g1: f64,
}

impl TargetedModel {
    pub fn predict(&self, w: &[f64], a: u8) -> f64 {
        self.initial.predict(w, a) + self.epsilon * clever(a, self.g1)
    }
}

/// `(2a - 1) / g(a)` with `g(1) = g1`, `g(0) = 1 - g1`.
pub fn clever_covariate(a: u8, g1: f64) -> Result<f64> {
    if !(g1 > 0.0 && g1 < 1.0) {
        return Err(Error::Positivity(g1));
    }
    Ok(clever(a, g1))
}

#[inline]
pub(crate) fn clever(a: u8, g1: f64) -> f64 {
    if a == 1 {
        1.0 / g1
    } else {
        -1.0 / (1.0 - g1)
    }
}

fn design_matrix(data: &TrialDataset) -> DMatrix<f64> {
    let (n, d) = (data.n(), data.d());
    let w = data.covariates();
    DMatrix::from_fn(n, d + 2, |i, j| {
        if j == 0 {
            1.0
        } else if j <= d {
            w[(i, j - 1)]
        } else {
            f64::from(data.arm()[i])
        }
    })
}

/// Least-squares fits of every endpoint on `[1, W, A]`, sharing one QR.
pub(crate) fn fit_all_outcomes(data: &TrialDataset) -> Result<Vec<OutcomeModel>> {
    let x = design_matrix(data);
    let p = x.ncols();
    if data.n() < p {
        return Err(Error::SingularFit { endpoint: 0 });
    }
    let qr = x.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..p).any(|j| r[(j, j)].abs() <= 1e-10 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularFit { endpoint: 0 });
    }
    let q = qr.q();
    let qty = q.transpose() * data.outcomes();
    let mut models = Vec::with_capacity(data.k());
    for k in 0..data.k() {
        let rhs = qty.column(k).into_owned();
        let coef = r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::SingularFit { endpoint: k })?;
        models.push(OutcomeModel { coefficients: coef });
    }
    Ok(models)
}

/// OLS of endpoint `endpoint` on intercept, all covariate main terms, and `A`.
pub fn fit_outcome_regression(data: &TrialDataset, endpoint: usize) -> Result<OutcomeModel> {
    if endpoint >= data.k() {
        return Err(Error::DimensionMismatch {
            expected: data.k(),
            got: endpoint,
        });
    }
    let mut models = fit_all_outcomes(data).map_err(|e| match e {
        Error::SingularFit { .. } => Error::SingularFit { endpoint },
        other => other,
    })?;
    Ok(models.swap_remove(endpoint))
}

/// Targeted estimate for a single endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointTmle {
    pub psi: f64,
    /// Per-subject efficient influence curve values, centered at `psi`.
    pub ic: DVector<f64>,
    pub model: TargetedModel,
}

/// Fluctuates `model` on `data` for endpoint `endpoint` and evaluates the EIC.
fn target_endpoint(data: &TrialDataset, endpoint: usize, model: OutcomeModel) -> EndpointTmle {
    let g1 = data.propensity();
    let n = data.n();
    let w = data.covariates();
    let y = data.outcomes().column(endpoint);
    let mut row = vec![0.0; data.d()];

    let mut resid = Vec::with_capacity(n);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        row.iter_mut().enumerate().for_each(|(j, r)| *r = w[(i, j)]);
        let a = data.arm()[i];
        let h = clever(a, g1);
        let r = y[i] - model.predict(&row, a);
        num += h * r;
        den += h * h;
        resid.push(r);
    }
    let epsilon = num / den;
    let targeted = TargetedModel {
        initial: model,
        epsilon,
        g1,
    };

    let mut plug = Vec::with_capacity(n);
    for i in 0..n {
        row.iter_mut().enumerate().for_each(|(j, r)| *r = w[(i, j)]);
        plug.push(targeted.predict(&row, 1) - targeted.predict(&row, 0));
    }
    let psi = plug.iter().sum::<f64>() / n as f64;
    let ic = DVector::from_fn(n, |i, _| {
        let h = clever(data.arm()[i], g1);
        h * (resid[i] - epsilon * h) + plug[i] - psi
    });
    EndpointTmle {
        psi,
        ic,
        model: targeted,
    }
}

/// TMLE of the ATE on endpoint `endpoint`.
pub fn tmle_ate(data: &TrialDataset, endpoint: usize) -> Result<EndpointTmle> {
    let model = fit_outcome_regression(data, endpoint)?;
    Ok(target_endpoint(data, endpoint, model))
}

/// Per-endpoint estimates, influence curves, and their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointEstimates {
    /// Targeted ATE per endpoint.
    pub psi: DVector<f64>,
    /// n×K influence-curve matrix.
    pub ic: DMatrix<f64>,
    /// K×K empirical covariance of the `ic` columns (denominator n).
    pub rho: DMatrix<f64>,
    pub models: Vec<TargetedModel>,
}

impl EndpointEstimates {
    pub fn k(&self) -> usize {
        self.psi.len()
    }

    pub fn n(&self) -> usize {
        self.ic.nrows()
    }
}

/// Column covariance with denominator `n`.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let means: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let mut s = 0.0;
            for i in 0..n {
                s += (x[(i, a)] - means[a]) * (x[(i, b)] - means[b]);
            }
            cov[(a, b)] = s / n as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov
}

/// Runs [`tmle_ate`] for every endpoint.
pub fn estimate_all_endpoints(data: &TrialDataset) -> Result<EndpointEstimates> {
    let models = fit_all_outcomes(data)?;
    let (n, k) = (data.n(), data.k());
    let mut psi = DVector::zeros(k);
    let mut ic = DMatrix::zeros(n, k);
    let mut targeted = Vec::with_capacity(k);
    for (j, model) in models.into_iter().enumerate() {
        let fit = target_endpoint(data, j, model);
        psi[j] = fit.psi;
        ic.set_column(j, &fit.ic);
        targeted.push(fit.model);
    }
    let rho = empirical_covariance(&ic);
    Ok(EndpointEstimates {
        psi,
        ic,
        rho,
        models: targeted,
    })
}

/// `ic · alpha`, the influence curve of the weighted composite.
pub fn composite_ic(alpha: &WeightVector, est: &EndpointEstimates) -> Result<DVector<f64>> {
    if alpha.len() != est.k() {
        return Err(Error::DimensionMismatch {
            expected: est.k(),
            got: alpha.len(),
        });
    }
    Ok(&est.ic * alpha.as_vector())
}
