//! Monte Carlo driver: scenario configuration, replication loop, and
//! aggregation into rejection rates and average weights.

mod report;

pub use report::{emit_report, read_report_csv, render_report, write_records_csv, OutputFormat};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comparators::{
    endpoint_pvalues, hochberg, holm, obrien_ols_tmle, obrien_ranksum, ComparatorResult, Method,
};
use crate::cv::{stabilized_cvtmle_test, CvConfig, DfRule, Targeting};
use crate::dgp::{
    gen_study1, gen_study2, GeneratedTrial, Study1Config, Study1Scenario, Study2Config,
    Study2Scenario,
};
use crate::error::{Error, Result};
use crate::par::map_indices;
use crate::rng::{Purpose, Streams};
use crate::stats::t_upper_tail;
use crate::tmle::{estimate_all_endpoints, EndpointEstimates};
use crate::weights::{StabilizationConfig, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Study1,
    Study2,
}

impl Study {
    pub fn key(self) -> &'static str {
        match self {
            Study::Study1 => "study1",
            Study::Study2 => "study2",
        }
    }

    pub fn scenarios(self) -> &'static [&'static str] {
        match self {
            Study::Study1 => &["S1", "S2", "S3", "S4"],
            Study::Study2 => &["global_null", "calibrated_alternative"],
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "study1" => Ok(Study::Study1),
            "study2" => Ok(Study::Study2),
            _ => Err(Error::Config(format!(
                "unknown study `{s}` (valid: study1, study2)"
            ))),
        }
    }
}

/// A parsed scenario identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioId {
    Study1(Study1Scenario),
    Study2(Study2Scenario),
}

impl ScenarioId {
    pub fn parse(study: Study, scenario: &str) -> Result<Self> {
        match study {
            Study::Study1 => scenario.parse().map(ScenarioId::Study1),
            Study::Study2 => scenario.parse().map(ScenarioId::Study2),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioId::Study1(s) => s.description(),
            ScenarioId::Study2(s) => s.description(),
        }
    }
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub study: Study,
    pub scenario: String,
    pub n: usize,
    pub replications: usize,
    pub base_seed: u64,
    /// One-sided level.
    pub gamma: f64,
    pub v_folds: usize,
    pub c_constant: f64,
    pub mc_draws: usize,
    pub n_perm: usize,
    pub methods: Vec<Method>,
    /// Degrees of freedom for t references; `n - 2` when absent.
    pub df: Option<usize>,
    pub targeting: Targeting,
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
    /// Keep per-replication records in the report.
    pub keep_records: bool,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

pub const DEFAULT_SEED: u64 = 202701;

impl ScenarioConfig {
    /// The default configuration for a named scenario.
    pub fn preset(study: Study, scenario: &str) -> Result<Self> {
        let id = ScenarioId::parse(study, scenario)?;
        let (n, c_constant, methods) = match study {
            Study::Study1 => (50, 0.25, Method::ALL.to_vec()),
            Study::Study2 => (60, 2.0, vec![Method::ObrienRankSum, Method::StabCvTmle]),
        };
        let scenario = match id {
            ScenarioId::Study1(s) => s.to_string(),
            ScenarioId::Study2(s) => s.to_string(),
        };
        Ok(Self {
            study,
            scenario,
            n,
            replications: 1000,
            base_seed: DEFAULT_SEED,
            gamma: 0.025,
            v_folds: 10,
            c_constant,
            mc_draws: 5000,
            n_perm: 5000,
            methods,
            df: None,
            targeting: Targeting::Pooled,
            jobs: 0,
            keep_records: false,
            out: None,
            format: OutputFormat::Markdown,
        })
    }

    /// All six scenarios of the two simulation studies, with defaults.
    pub fn builtin_presets() -> Vec<Self> {
        [Study::Study1, Study::Study2]
            .into_iter()
            .flat_map(|study| {
                study
                    .scenarios()
                    .iter()
                    .map(move |s| Self::preset(study, s).expect("built-in preset"))
            })
            .collect()
    }

    pub fn scenario_id(&self) -> Result<ScenarioId> {
        ScenarioId::parse(self.study, &self.scenario)
    }

    pub fn df_rule(&self) -> DfRule {
        self.df.map_or(DfRule::NMinusTwo, DfRule::Fixed)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_id()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!(
                "gamma {} outside (0, 0.5)",
                self.gamma
            )));
        }
        if self.methods.contains(&Method::ObrienRankSum) && self.n_perm == 0 {
            return Err(Error::Config("n_perm must be >= 1".into()));
        }
        if self.df == Some(0) {
            return Err(Error::Config("df must be >= 1".into()));
        }
        self.cv_config()?;
        self.generator()?;
        Ok(())
    }

    fn cv_config(&self) -> Result<CvConfig> {
        let stab =
            StabilizationConfig::new(WeightVector::reference(2), self.c_constant, self.mc_draws)?;
        let mut cfg = CvConfig::new(stab, self.v_folds, self.gamma)?;
        if self.v_folds < 2 || self.n < 2 * self.v_folds {
            return Err(Error::Config(format!(
                "{} folds need n >= {}, got {}",
                self.v_folds,
                2 * self.v_folds,
                self.n
            )));
        }
        cfg.df = self.df_rule();
        cfg.targeting = self.targeting;
        Ok(cfg)
    }

    fn generator(&self) -> Result<Generator> {
        Ok(match self.scenario_id()? {
            ScenarioId::Study1(s) => Generator::Study1(Study1Config::scenario(self.n, s)?),
            ScenarioId::Study2(s) => Generator::Study2(Box::new(Study2Config::new(self.n, s)?)),
        })
    }
}

/// Partial configuration from a config file or command-line flags. Unset
/// fields fall back to the named scenario's preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub study: Option<Study>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub base_seed: Option<u64>,
    pub gamma: Option<f64>,
    pub v_folds: Option<usize>,
    pub c_constant: Option<f64>,
    pub mc_draws: Option<usize>,
    pub n_perm: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub df: Option<usize>,
    pub targeting: Option<Targeting>,
    pub jobs: Option<usize>,
    pub keep_records: Option<bool>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl ConfigOverrides {
    /// Field-wise merge; values set in `over` win.
    pub fn merge(self, over: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            study: over.study.or(self.study),
            scenario: over.scenario.or(self.scenario),
            n: over.n.or(self.n),
            replications: over.replications.or(self.replications),
            base_seed: over.base_seed.or(self.base_seed),
            gamma: over.gamma.or(self.gamma),
            v_folds: over.v_folds.or(self.v_folds),
            c_constant: over.c_constant.or(self.c_constant),
            mc_draws: over.mc_draws.or(self.mc_draws),
            n_perm: over.n_perm.or(self.n_perm),
            methods: over.methods.or(self.methods),
            df: over.df.or(self.df),
            targeting: over.targeting.or(self.targeting),
            jobs: over.jobs.or(self.jobs),
            keep_records: over.keep_records.or(self.keep_records),
            out: over.out.or(self.out),
            format: over.format.or(self.format),
        }
    }

    /// Preset for the chosen scenario with every set field applied, validated.
    pub fn resolve(self) -> Result<ScenarioConfig> {
        let study = self.study.unwrap_or(Study::Study1);
        let scenario = self
            .scenario
            .unwrap_or_else(|| study.scenarios()[0].to_string());
        let mut cfg = ScenarioConfig::preset(study, &scenario)?;
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { cfg.$field = v; } )* };
        }
        set!(
            n,
            replications,
            base_seed,
            gamma,
            v_folds,
            c_constant,
            mc_draws,
            n_perm,
            methods,
            targeting,
            jobs,
            keep_records,
            format
        );
        if self.df.is_some() {
            cfg.df = self.df;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
enum Generator {
    Study1(Study1Config),
    Study2(Box<Study2Config>),
}

impl Generator {
    fn draw(&self, streams: &Streams) -> Result<GeneratedTrial> {
        let mut rng = streams.get(Purpose::Data);
        match self {
            Generator::Study1(c) => gen_study1(c, &mut rng),
            Generator::Study2(c) => gen_study2(c, &mut rng),
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

impl From<ComparatorResult> for MethodOutcome {
    fn from(r: ComparatorResult) -> Self {
        Self {
            method: r.method,
            statistic: r.statistic,
            p_value: r.p_value,
            reject: r.reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// One entry per configured method, in configuration order.
    pub outcomes: Vec<MethodOutcome>,
    /// Fold-averaged stabilized weights, when the CV-TMLE test ran.
    pub mean_weights: Option<Vec<f64>>,
}

/// Applies every configured method to one replication.
pub fn run_replication(cfg: &ScenarioConfig, replication: usize) -> Result<ReplicationRecord> {
    let generator = cfg.generator()?;
    let cv = cfg.cv_config()?;
    replicate(cfg, &generator, &cv, replication)
}

fn replicate(
    cfg: &ScenarioConfig,
    generator: &Generator,
    cv: &CvConfig,
    replication: usize,
) -> Result<ReplicationRecord> {
    let inner = || -> Result<ReplicationRecord> {
        let streams = Streams::new(cfg.base_seed, replication as u64);
        let trial = generator.draw(&streams)?;
        let data = &trial.dataset;
        let n = data.n();
        let df = cv.df.resolve(n);

        let mut full: Option<EndpointEstimates> = None;
        let mut endpoint_p: Option<Vec<f64>> = None;
        let mut outcomes = Vec::with_capacity(cfg.methods.len());
        let mut mean_weights = None;
        for &method in &cfg.methods {
            let outcome = match method {
                Method::Holm | Method::Hochberg | Method::ObrienOls => {
                    if full.is_none() {
                        full = Some(estimate_all_endpoints(data)?);
                    }
                    let est = full.as_ref().expect("set above");
                    if method == Method::ObrienOls {
                        obrien_ols_tmle(est, n, cfg.gamma, df)?.into()
                    } else {
                        if endpoint_p.is_none() {
                            endpoint_p = Some(endpoint_pvalues(est, n, df)?);
                        }
                        let p = endpoint_p.as_deref().expect("set above");
                        if method == Method::Holm {
                            holm(p, cfg.gamma)?.into()
                        } else {
                            hochberg(p, cfg.gamma)?.into()
                        }
                    }
                }
                Method::StabCvTmle => {
                    let mut cv = cv.clone();
                    if cv.stabilization.alpha_ref().len() != data.k() {
                        cv.stabilization = StabilizationConfig::new(
                            WeightVector::reference(data.k()),
                            cfg.c_constant,
                            cfg.mc_draws,
                        )?;
                    }
                    let r = stabilized_cvtmle_test(data, &cv, &streams)?;
                    mean_weights = r.mean_weights().map(|w| w.as_slice().to_vec());
                    MethodOutcome {
                        method,
                        statistic: r.t_cv,
                        p_value: t_upper_tail(r.t_cv, r.df as f64),
                        reject: r.reject,
                    }
                }
                Method::ObrienRankSum => obrien_ranksum(
                    data.outcomes(),
                    data.arm(),
                    cfg.n_perm,
                    cfg.gamma,
                    &mut streams.get(Purpose::Permutation),
                )?
                .into(),
            };
            outcomes.push(outcome);
        }
        Ok(ReplicationRecord {
            replication,
            outcomes,
            mean_weights,
        })
    };
    inner().map_err(|e| e.in_replication(replication))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial standard error `√(p(1-p)/R)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub study: Study,
    pub scenario: String,
    pub label: String,
    pub n: usize,
    pub replications: usize,
    pub methods: Vec<MethodSummary>,
    /// Stabilized weights averaged over folds, then replications.
    pub mean_weights: Option<Vec<f64>>,
    pub wall_clock_secs: f64,
    pub records: Option<Vec<ReplicationRecord>>,
}

impl ScenarioReport {
    pub fn rate(&self, method: Method) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.rate)
    }
}

/// Runs every replication and aggregates them in replication order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let generator = cfg.generator()?;
    let cv = cfg.cv_config()?;
    let start = Instant::now();
    let records = map_indices(cfg.replications, cfg.jobs, |r| {
        replicate(cfg, &generator, &cv, r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let wall_clock_secs = start.elapsed().as_secs_f64();
    let mut report = aggregate(cfg, &records)?;
    report.wall_clock_secs = wall_clock_secs;
    if cfg.keep_records {
        report.records = Some(records);
    }
    Ok(report)
}

/// Rejection rates and average weights from per-replication records.
pub fn aggregate(cfg: &ScenarioConfig, records: &[ReplicationRecord]) -> Result<ScenarioReport> {
    let reps = records.len();
    if reps == 0 {
        return Err(Error::Config("no replications to aggregate".into()));
    }
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let rejections = records.iter().filter(|r| r.outcomes[j].reject).count();
            let rate = rejections as f64 / reps as f64;
            MethodSummary {
                method,
                rejections,
                rate,
                se: (rate * (1.0 - rate) / reps as f64).sqrt(),
            }
        })
        .collect();
    let mean_weights = if cfg.methods.contains(&Method::StabCvTmle) {
        let k = records[0].mean_weights.as_ref().map_or(0, Vec::len);
        let mut sums = vec![0.0; k];
        for r in records {
            let w = r
                .mean_weights
                .as_ref()
                .ok_or_else(|| Error::Config("missing CV-TMLE weights".into()))?;
            sums.iter_mut().zip(w).for_each(|(s, x)| *s += x);
        }
        Some(WeightVector::normalized(sums)?.as_slice().to_vec())
    } else {
        None
    };
    Ok(ScenarioReport {
        study: cfg.study,
        scenario: cfg.scenario.clone(),
        label: cfg.scenario_id()?.description().to_string(),
        n: cfg.n,
        replications: reps,
        methods,
        mean_weights,
        wall_clock_secs: 0.0,
        records: None,
    })
}
