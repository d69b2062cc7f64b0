use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use stabcv::checks::run_validation;
use stabcv::dgp::{gen_study1, gen_study2, Study1Config, Study2Config};
use stabcv::harness::{
    render_report, write_records_csv, ConfigOverrides, OutputFormat, ScenarioConfig, ScenarioId,
    ScenarioReport, Study, DEFAULT_SEED,
};
use stabcv::{run_scenario, Error, Method, Purpose, Streams, Targeting};

#[derive(Parser)]
#[command(
    name = "stabcv",
    version,
    about = "Stabilized CV-TMLE global test simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run(Box<RunArgs>),
    /// Run the invariant suite on synthetic data.
    Validate {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Run every built-in scenario and emit the rejection-rate and weight tables.
    Tables(TablesArgs),
    /// Write one simulated trial as CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any subset of the scenario fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    study: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long = "c-const")]
    c_const: Option<f64>,
    #[arg(long = "mc-draws")]
    mc_draws: Option<usize>,
    #[arg(long)]
    perms: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated: holm, hochberg, obrien_ols, stab_cvtmle, obrien_ranksum.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    df: Option<usize>,
    /// pooled or fold_specific.
    #[arg(long)]
    targeting: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write one CSV row per replication and method to this path.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct TablesArgs {
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "mc-draws")]
    mc_draws: Option<usize>,
    #[arg(long)]
    perms: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: String,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "study1")]
    study: String,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Replication index whose data stream is used.
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input from the user, reported with exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: Error) -> anyhow::Error {
    anyhow::Error::new(Usage(e.to_string()))
}

fn parse_methods(names: &[String]) -> anyhow::Result<Vec<Method>> {
    names
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            Method::parse(s).ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.key()).collect();
                anyhow::Error::new(Usage(format!(
                    "unknown method `{s}` (valid: {})",
                    valid.join(", ")
                )))
            })
        })
        .collect()
}

fn parse_targeting(s: &str) -> anyhow::Result<Targeting> {
    match s {
        "pooled" => Ok(Targeting::Pooled),
        "fold_specific" => Ok(Targeting::FoldSpecific),
        _ => Err(Usage(format!(
            "unknown targeting `{s}` (valid: pooled, fold_specific)"
        ))
        .into()),
    }
}

fn load_config(path: &Path) -> anyhow::Result<ConfigOverrides> {
    let text = fs::read_to_string(path)
        .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Usage(format!("invalid config {}: {e}", path.display())).into())
}

fn write_output(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout()
            .write_all(text.as_bytes())
            .context("cannot write to stdout"),
    }
}

fn resolve_run(args: &RunArgs) -> anyhow::Result<ScenarioConfig> {
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => ConfigOverrides::default(),
    };
    let flags = ConfigOverrides {
        study: args
            .study
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(usage)?,
        scenario: args.scenario.clone(),
        n: args.n,
        replications: args.reps,
        base_seed: args.seed,
        gamma: args.gamma,
        v_folds: args.folds,
        c_constant: args.c_const,
        mc_draws: args.mc_draws,
        n_perm: args.perms,
        methods: args.methods.as_deref().map(parse_methods).transpose()?,
        df: args.df,
        targeting: args.targeting.as_deref().map(parse_targeting).transpose()?,
        jobs: args.jobs,
        keep_records: args.records.as_ref().map(|_| true),
        out: args.out.clone(),
        format: args
            .format
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(usage)?,
    };
    file.merge(flags).resolve().map_err(usage)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let cfg = resolve_run(&args)?;
    let report = run_scenario(&cfg)?;
    let text = render_report(std::slice::from_ref(&report), cfg.format)?;
    write_output(&text, cfg.out.as_deref())?;
    if let Some(path) = &args.records {
        let file =
            fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_records_csv(&report, file)?;
    }
    eprintln!(
        "{} {}: {} replications in {:.1}s",
        cfg.study, cfg.scenario, report.replications, report.wall_clock_secs
    );
    Ok(())
}

fn tables(args: TablesArgs) -> anyhow::Result<()> {
    let format: OutputFormat = args.format.parse().map_err(usage)?;
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for mut cfg in ScenarioConfig::builtin_presets() {
        if let Some(r) = args.reps {
            cfg.replications = r;
        }
        if let Some(s) = args.seed {
            cfg.base_seed = s;
        }
        if let Some(b) = args.mc_draws {
            cfg.mc_draws = b;
        }
        if let Some(p) = args.perms {
            cfg.n_perm = p;
        }
        if let Some(j) = args.jobs {
            cfg.jobs = j;
        }
        cfg.validate().map_err(usage)?;
        let report = run_scenario(&cfg)?;
        eprintln!(
            "{} {}: {} replications in {:.1}s",
            cfg.study, cfg.scenario, report.replications, report.wall_clock_secs
        );
        reports.push(report);
    }
    write_output(&render_report(&reports, format)?, args.out.as_deref())
}

fn validate(seed: u64) -> anyhow::Result<bool> {
    let outcomes = run_validation(seed);
    let mut all = true;
    for c in &outcomes {
        println!(
            "[{}] ({}) {}: {} ({:.2}s)",
            if c.passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.detail,
            c.seconds
        );
        all &= c.passed;
    }
    Ok(all)
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let study: Study = args.study.parse().map_err(usage)?;
    let scenario = args
        .scenario
        .unwrap_or_else(|| study.scenarios()[0].to_string());
    let id = ScenarioId::parse(study, &scenario).map_err(usage)?;
    let preset = ScenarioConfig::preset(study, &scenario).map_err(usage)?;
    let n = args.n.unwrap_or(preset.n);
    let mut rng = Streams::new(args.seed, args.replication).get(Purpose::Data);
    let trial = match id {
        ScenarioId::Study1(s) => {
            gen_study1(&Study1Config::scenario(n, s).map_err(usage)?, &mut rng)?
        }
        ScenarioId::Study2(s) => gen_study2(&Study2Config::new(n, s).map_err(usage)?, &mut rng)?,
    };
    match &args.out {
        Some(p) => {
            let f =
                fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            trial.dataset.write_csv(f)?;
        }
        None => trial.dataset.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(*a).map(|_| true),
        Command::Validate { seed } => validate(seed),
        Command::Tables(a) => tables(a).map(|_| true),
        Command::Generate(a) => generate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
