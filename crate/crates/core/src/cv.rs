//! Stabilized cross-validated TMLE for the global null.
//!
//! Per fold, the training sample picks composite weights (endpoint TMLEs,
//! simplex optimization, supremum-null p-value, shrinkage) and supplies the
//! initial outcome regressions. Only the fluctuation and the evaluation of
//! the estimate use the held-out validation sample. Fold estimates are then
//! pooled into a single t statistic.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Streams};
use crate::stats::t_quantile;
use crate::tmle::{clever, estimate_all_endpoints, EndpointEstimates};
use crate::weights::{
    optimize_weights_with_reference, repair_psd, stabilize, supremum_null_pvalue,
    StabilizationConfig, TrainingFoldSummary, WeightVector,
};

/// Fold label (0-based) for every subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    assignment: Vec<usize>,
    v_folds: usize,
}

impl FoldPlan {
    pub fn from_assignment(assignment: Vec<usize>, v_folds: usize) -> Result<Self> {
        if v_folds < 2 {
            return Err(Error::Config(format!(
                "need at least 2 folds, got {v_folds}"
            )));
        }
        let mut sizes = vec![0usize; v_folds];
        for &f in &assignment {
            if f >= v_folds {
                return Err(Error::Config(format!("fold label {f} out of range")));
            }
            sizes[f] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::Config("empty validation fold".into()));
        }
        Ok(Self {
            assignment,
            v_folds,
        })
    }

    pub fn v_folds(&self) -> usize {
        self.v_folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.v_folds];
        self.assignment.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }

    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Uniformly random partition into `v_folds` folds whose sizes differ by at
/// most one.
pub fn make_folds<R: Rng + ?Sized>(n: usize, v_folds: usize, rng: &mut R) -> Result<FoldPlan> {
    if v_folds < 2 {
        return Err(Error::Config(format!(
            "need at least 2 folds, got {v_folds}"
        )));
    }
    if n < 2 * v_folds {
        return Err(Error::Config(format!(
            "n = {n} is too small for {v_folds} folds (need n >= {})",
            2 * v_folds
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % v_folds;
    }
    FoldPlan::from_assignment(assignment, v_folds)
}

/// How the validation-sample fluctuation is fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targeting {
    /// One fluctuation parameter across all validation folds.
    #[default]
    Pooled,
    /// A separate fluctuation parameter per validation fold.
    FoldSpecific,
}

/// Degrees of freedom for the final t reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DfRule {
    /// `ν = n - 2`.
    #[default]
    NMinusTwo,
    Fixed(usize),
}

impl DfRule {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            DfRule::NMinusTwo => n.saturating_sub(2).max(1),
            DfRule::Fixed(v) => v.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub stabilization: StabilizationConfig,
    pub v_folds: usize,
    /// One-sided level.
    pub gamma: f64,
    pub df: DfRule,
    pub targeting: Targeting,
}

impl CvConfig {
    pub fn new(stabilization: StabilizationConfig, v_folds: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 0.5) {
            return Err(Error::Config(format!("gamma {gamma} outside (0, 0.5)")));
        }
        Ok(Self {
            stabilization,
            v_folds,
            gamma,
            df: DfRule::default(),
            targeting: Targeting::default(),
        })
    }
}

/// Training-fold learning plus validation-fold initial predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub summary: TrainingFoldSummary,
    /// Validation subjects, as indices into the full dataset.
    pub valid_idx: Vec<usize>,
    /// `Q_α(0, W)` from training-fold coefficients, per validation subject.
    pub q0: Vec<f64>,
    /// `Q_α(1, W)` from training-fold coefficients, per validation subject.
    pub q1: Vec<f64>,
    /// `Y · α_stab` per validation subject.
    pub composite_y: Vec<f64>,
}

/// Composite initial predictions and outcomes on fold `fold` for weights
/// `alpha`, using models fit on the training sample.
fn validation_predictions(
    data: &TrialDataset,
    plan: &FoldPlan,
    fold: usize,
    train: &EndpointEstimates,
    alpha: &WeightVector,
) -> (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let valid_idx = plan.validation(fold);
    let w = data.covariates();
    let y = data.outcomes();
    let mut row = vec![0.0; data.d()];
    let (mut q0, mut q1, mut ybar) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &valid_idx {
        row.iter_mut().enumerate().for_each(|(j, r)| *r = w[(i, j)]);
        let (mut a0, mut a1, mut yc) = (0.0, 0.0, 0.0);
        for (k, model) in train.models.iter().enumerate() {
            let wk = alpha.get(k);
            a0 += wk * model.predict(&row, 0);
            a1 += wk * model.predict(&row, 1);
            yc += wk * y[(i, k)];
        }
        q0.push(a0);
        q1.push(a1);
        ybar.push(yc);
    }
    (valid_idx, q0, q1, ybar)
}

fn training_estimates(
    data: &TrialDataset,
    plan: &FoldPlan,
    fold: usize,
) -> Result<EndpointEstimates> {
    let train = data.subset(&plan.training(fold))?;
    estimate_all_endpoints(&train)
}

/// Steps 1a, 1b, and 2 of the procedure for one fold.
pub fn run_fold<R: Rng + ?Sized>(
    data: &TrialDataset,
    plan: &FoldPlan,
    fold: usize,
    cfg: &StabilizationConfig,
    rng: &mut R,
) -> Result<FoldResult> {
    let mut inner = || -> Result<FoldResult> {
        if fold >= plan.v_folds() || plan.assignment().len() != data.n() {
            return Err(Error::Config("fold plan does not match dataset".into()));
        }
        if cfg.alpha_ref().len() != data.k() {
            return Err(Error::DimensionMismatch {
                expected: data.k(),
                got: cfg.alpha_ref().len(),
            });
        }
        let est = training_estimates(data, plan, fold)?;
        let rho = repair_psd(&est.rho)?;
        let (alpha_adapt, ratio) =
            optimize_weights_with_reference(&est.psi, &rho, cfg.alpha_ref())?;
        let t_star = (est.n() as f64).sqrt() * ratio;
        let p_value = supremum_null_pvalue(t_star, &rho, cfg, rng)?;
        let alpha_stab = stabilize(&alpha_adapt, p_value, data.n(), cfg)?;
        let (valid_idx, q0, q1, composite_y) =
            validation_predictions(data, plan, fold, &est, &alpha_stab);
        Ok(FoldResult {
            fold,
            summary: TrainingFoldSummary {
                alpha_adapt,
                t_star,
                p_value,
                alpha_stab,
            },
            valid_idx,
            q0,
            q1,
            composite_y,
        })
    };
    inner().map_err(|e| e.in_fold(fold))
}

/// Fold result with prespecified weights and no learning step.
pub fn fixed_weight_fold(
    data: &TrialDataset,
    plan: &FoldPlan,
    fold: usize,
    alpha: &WeightVector,
) -> Result<FoldResult> {
    let est = training_estimates(data, plan, fold).map_err(|e| e.in_fold(fold))?;
    let (valid_idx, q0, q1, composite_y) = validation_predictions(data, plan, fold, &est, alpha);
    Ok(FoldResult {
        fold,
        summary: TrainingFoldSummary {
            alpha_adapt: alpha.clone(),
            t_star: f64::NAN,
            p_value: 1.0,
            alpha_stab: alpha.clone(),
        },
        valid_idx,
        q0,
        q1,
        composite_y,
    })
}

/// Output of the validation-sample targeting step.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledTarget {
    /// Fluctuation parameter per fold (all equal under pooled targeting).
    pub epsilon: Vec<f64>,
    /// Fold-specific targeted estimates.
    pub psi_folds: Vec<f64>,
    /// Cross-validated influence curve value per subject, original order.
    pub ic_cv: DVector<f64>,
}

/// Fits the fluctuation on the validation samples and evaluates fold
/// estimates and the cross-validated influence curve.
pub fn pooled_target(
    fold_results: &[FoldResult],
    data: &TrialDataset,
    targeting: Targeting,
) -> Result<PooledTarget> {
    let n = data.n();
    if fold_results.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 folds, got {}",
            fold_results.len()
        )));
    }
    let mut seen = vec![false; n];
    for fr in fold_results {
        if fr.valid_idx.is_empty() {
            return Err(Error::Config(format!(
                "validation fold {} is empty",
                fr.fold
            )));
        }
        for &i in &fr.valid_idx {
            if i >= n || seen[i] {
                return Err(Error::Config(format!(
                    "subject {i} is not in exactly one fold"
                )));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Config(
            "some subjects are in no validation fold".into(),
        ));
    }

    let g1 = data.propensity();
    let arm = data.arm();
    let score = |fr: &FoldResult| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, &i) in fr.valid_idx.iter().enumerate() {
            let a = arm[i];
            let h = clever(a, g1);
            let q = if a == 1 { fr.q1[j] } else { fr.q0[j] };
            num += h * (fr.composite_y[j] - q);
            den += h * h;
        }
        (num, den)
    };
    let epsilon: Vec<f64> = match targeting {
        Targeting::Pooled => {
            let (num, den) = fold_results
                .iter()
                .map(score)
                .fold((0.0, 0.0), |acc, (a, b)| (acc.0 + a, acc.1 + b));
            vec![num / den; fold_results.len()]
        }
        Targeting::FoldSpecific => fold_results
            .iter()
            .map(|fr| {
                let (num, den) = score(fr);
                num / den
            })
            .collect(),
    };

    let (h1, h0) = (clever(1, g1), clever(0, g1));
    let mut psi_folds = Vec::with_capacity(fold_results.len());
    let mut ic = DVector::zeros(n);
    for (fr, &eps) in fold_results.iter().zip(&epsilon) {
        let m = fr.valid_idx.len() as f64;
        let psi_v = fr
            .q1
            .iter()
            .zip(&fr.q0)
            .map(|(q1, q0)| (q1 + eps * h1) - (q0 + eps * h0))
            .sum::<f64>()
            / m;
        for (j, &i) in fr.valid_idx.iter().enumerate() {
            let a = arm[i];
            let h = clever(a, g1);
            let q1s = fr.q1[j] + eps * h1;
            let q0s = fr.q0[j] + eps * h0;
            let qa = if a == 1 { q1s } else { q0s };
            ic[i] = h * (fr.composite_y[j] - qa) + q1s - q0s - psi_v;
        }
        psi_folds.push(psi_v);
    }
    Ok(PooledTarget {
        epsilon,
        psi_folds,
        ic_cv: ic,
    })
}

/// Final estimate, variance, statistic, and decision.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTestResult {
    pub psi_cv: f64,
    pub sigma_cv: f64,
    pub t_cv: f64,
    pub df: usize,
    pub critical: f64,
    pub reject: bool,
    /// Stabilized weights per fold.
    pub fold_weights: Vec<WeightVector>,
    /// Training p-values per fold.
    pub fold_pvalues: Vec<f64>,
    /// Unstabilized weights per fold.
    pub fold_adaptive: Vec<WeightVector>,
    pub fold_t_star: Vec<f64>,
    pub psi_folds: Vec<f64>,
}

impl GlobalTestResult {
    /// Fold-averaged stabilized weights.
    pub fn mean_weights(&self) -> Option<WeightVector> {
        let first = self.fold_weights.first()?;
        let v = self.fold_weights.len() as f64;
        let sums: Vec<f64> = (0..first.len())
            .map(|k| self.fold_weights.iter().map(|w| w.get(k)).sum::<f64>() / v)
            .collect();
        WeightVector::normalized(sums).ok()
    }
}

const ZERO_SIGMA: f64 = 1e-12;

/// Pools fold estimates: `ψ_CV` is their mean, `σ²_CV` the variance of the
/// cross-validated influence curve, `T = √n ψ_CV / σ_CV`, and the test
/// rejects when `T > t_{1-γ}(ν)`.
pub fn pool_and_decide(
    psi_folds: &[f64],
    ic_cv: &DVector<f64>,
    gamma: f64,
    df: usize,
) -> Result<GlobalTestResult> {
    if psi_folds.is_empty() || ic_cv.is_empty() {
        return Err(Error::Config("nothing to pool".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) || df == 0 {
        return Err(Error::Config(format!("invalid gamma {gamma} or df {df}")));
    }
    let n = ic_cv.len() as f64;
    let psi_cv = psi_folds.iter().sum::<f64>() / psi_folds.len() as f64;
    let mean = ic_cv.sum() / n;
    let sigma_cv = (ic_cv.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    let t_cv = if sigma_cv > ZERO_SIGMA {
        n.sqrt() * psi_cv / sigma_cv
    } else if psi_cv.abs() <= 1e-10 {
        0.0
    } else {
        return Err(Error::DegenerateInference(psi_cv));
    };
    let critical = t_quantile(1.0 - gamma, df as f64);
    Ok(GlobalTestResult {
        psi_cv,
        sigma_cv,
        t_cv,
        df,
        critical,
        reject: t_cv > critical,
        fold_weights: Vec::new(),
        fold_pvalues: Vec::new(),
        fold_adaptive: Vec::new(),
        fold_t_star: Vec::new(),
        psi_folds: psi_folds.to_vec(),
    })
}

fn finish(data: &TrialDataset, folds: Vec<FoldResult>, cfg: &CvConfig) -> Result<GlobalTestResult> {
    let target = pooled_target(&folds, data, cfg.targeting)?;
    let mut out = pool_and_decide(
        &target.psi_folds,
        &target.ic_cv,
        cfg.gamma,
        cfg.df.resolve(data.n()),
    )?;
    for fr in folds {
        out.fold_weights.push(fr.summary.alpha_stab);
        out.fold_adaptive.push(fr.summary.alpha_adapt);
        out.fold_pvalues.push(fr.summary.p_value);
        out.fold_t_star.push(fr.summary.t_star);
    }
    Ok(out)
}

/// All training-fold learning for a given plan.
pub fn run_folds(
    data: &TrialDataset,
    plan: &FoldPlan,
    cfg: &StabilizationConfig,
    streams: &Streams,
) -> Result<Vec<FoldResult>> {
    (0..plan.v_folds())
        .map(|v| {
            let mut rng = streams.get(Purpose::NullDraws { fold: v as u32 });
            run_fold(data, plan, v, cfg, &mut rng)
        })
        .collect()
}

/// The stabilized CV-TMLE test on a given fold plan.
pub fn stabilized_cvtmle_with_plan(
    data: &TrialDataset,
    plan: &FoldPlan,
    cfg: &CvConfig,
    streams: &Streams,
) -> Result<GlobalTestResult> {
    let folds = run_folds(data, plan, &cfg.stabilization, streams)?;
    finish(data, folds, cfg)
}

/// Full procedure: random folds, per-fold learning and shrinkage,
/// validation targeting, pooling, and the t decision.
///
/// Fold assignment uses the `Folds` stream of `streams`; fold `v`'s null
/// draws use `NullDraws { fold: v }`.
pub fn stabilized_cvtmle_test(
    data: &TrialDataset,
    cfg: &CvConfig,
    streams: &Streams,
) -> Result<GlobalTestResult> {
    let plan = make_folds(data.n(), cfg.v_folds, &mut streams.get(Purpose::Folds))?;
    stabilized_cvtmle_with_plan(data, &plan, cfg, streams)
}

/// CV-TMLE of the composite with fixed weights `alpha` in every fold.
pub fn fixed_weight_cvtmle(
    data: &TrialDataset,
    plan: &FoldPlan,
    alpha: &WeightVector,
    cfg: &CvConfig,
) -> Result<GlobalTestResult> {
    let folds = (0..plan.v_folds())
        .map(|v| fixed_weight_fold(data, plan, v, alpha))
        .collect::<Result<Vec<_>>>()?;
    finish(data, folds, cfg)
}
