//! Stabilized cross-validated TMLE global test for multiple endpoints in
//! two-arm randomized trials, with comparator tests, data generators, and a
//! deterministic Monte Carlo harness.

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod comparators;
pub mod cv;
pub mod data;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod par;
pub mod rng;
pub mod stats;
pub mod tmle;
pub mod weights;

pub use comparators::{ComparatorResult, Method};
pub use cv::{stabilized_cvtmle_test, CvConfig, GlobalTestResult, Targeting};
pub use data::TrialDataset;
pub use error::{Error, Result};
pub use harness::{emit_report, run_scenario, OutputFormat, ScenarioConfig, ScenarioReport, Study};
pub use rng::{Purpose, Streams};
pub use tmle::{estimate_all_endpoints, tmle_ate, EndpointEstimates};
pub use weights::{optimize_weights, stabilize, StabilizationConfig, WeightVector};
