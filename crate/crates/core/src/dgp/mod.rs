//! Data-generating processes for the two simulation studies.
//!
//! Both generators are pure functions of their configuration and an RNG
//! stream.

mod study1;
mod study2;
mod truncated;

pub use study1::{gen_study1, Study1Config, Study1Scenario};
pub use study2::{
    centered_design, covariate_covariance, gen_study2, ChangeLaw, Region, Severity, Study2Config,
    Study2Params, Study2Scenario,
};
pub use truncated::{truncated_bvn, truncated_normal};

use nalgebra::{DMatrix, DVector};

use crate::data::TrialDataset;

/// A simulated trial and the treatment effects implied by its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrial {
    pub dataset: TrialDataset,
    /// True ATE per endpoint.
    pub truth: DVector<f64>,
    /// Baseline outcomes when the design has them (Study 2), n×2.
    pub baseline: Option<DMatrix<f64>>,
}
