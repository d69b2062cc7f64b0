//! End-to-end acceptance run at the default configuration.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use stabcv::checks::run_validation;
use stabcv::harness::DEFAULT_SEED;
use stabcv::{run_scenario, Method, ScenarioConfig, ScenarioReport, Study};

const TOL: f64 = 0.05;
const TYPE_I_BAND: (f64, f64) = (0.010, 0.040);
const PARALLEL_JOBS: usize = 0;

struct Line {
    id: u8,
    passed: bool,
    detail: String,
}

fn run(study: Study, scenario: &str) -> ScenarioReport {
    let mut cfg = ScenarioConfig::preset(study, scenario).expect("preset");
    cfg.jobs = PARALLEL_JOBS;
    let start = Instant::now();
    let report = run_scenario(&cfg).expect("scenario run");
    eprintln!(
        "  ran {} {scenario} ({} reps) in {:.1}s",
        study.key(),
        cfg.replications,
        start.elapsed().as_secs_f64()
    );
    report
}

fn rate(r: &ScenarioReport, m: Method) -> f64 {
    r.rate(m).expect("method present")
}

fn near(value: f64, target: f64) -> bool {
    (value - target).abs() <= TOL
}

/// Accumulates failures for a criterion with several sub-checks.
#[derive(Default)]
struct Tally {
    failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            self.failures.push(what);
        }
    }

    fn line(self, id: u8, summary: String) -> Line {
        let passed = self.failures.is_empty();
        let detail = if passed {
            summary
        } else {
            format!("{summary}; failed: {}", self.failures.join("; "))
        };
        Line { id, passed, detail }
    }
}

fn criterion_1(s1: &ScenarioReport) -> Line {
    let mut t = Tally::default();
    let mut parts = Vec::new();
    for m in &s1.methods {
        let ok = (TYPE_I_BAND.0..=TYPE_I_BAND.1).contains(&m.rate);
        parts.push(format!("{} {:.3}", m.method.key(), m.rate));
        t.check(
            ok,
            format!("{} {:.3} outside [0.010, 0.040]", m.method.key(), m.rate),
        );
    }
    t.line(1, format!("Study 1 S1 Type I error: {}", parts.join(", ")))
}

fn criterion_2(s: &[ScenarioReport]) -> Line {
    let mut t = Tally::default();
    let power = &s[1..];
    let targets: [(Method, [f64; 3]); 4] = [
        (Method::StabCvTmle, [0.873, 0.562, 0.700]),
        (Method::ObrienOls, [0.657, 0.645, 0.648]),
        (Method::Holm, [0.858, 0.472, 0.668]),
        (Method::ObrienRankSum, [0.478, 0.526, 0.504]),
    ];
    for (m, want) in targets {
        for (r, w) in power.iter().zip(want) {
            let got = rate(r, m);
            t.check(
                near(got, w),
                format!("{} {} {got:.3} vs {w:.3}", r.scenario, m.key()),
            );
        }
    }
    for r in s {
        let (holm, hoch) = (rate(r, Method::Holm), rate(r, Method::Hochberg));
        t.check(
            hoch >= holm,
            format!("{} hochberg {hoch:.3} < holm {holm:.3}", r.scenario),
        );
    }
    let highest = |r: &ScenarioReport, m: Method| {
        let v = rate(r, m);
        r.methods.iter().all(|x| x.method == m || x.rate < v)
    };
    for r in [&s[1], &s[3]] {
        t.check(
            highest(r, Method::StabCvTmle),
            format!("{} stab_cvtmle not highest", r.scenario),
        );
    }
    t.check(
        highest(&s[2], Method::ObrienOls),
        "S3 obrien_ols not highest".into(),
    );
    for r in power {
        let (ols, rank) = (rate(r, Method::ObrienOls), rate(r, Method::ObrienRankSum));
        t.check(
            ols > rank,
            format!("{} obrien_ols {ols:.3} <= rank-sum {rank:.3}", r.scenario),
        );
    }
    let table: Vec<String> = power
        .iter()
        .map(|r| {
            let v: Vec<String> = r.methods.iter().map(|m| format!("{:.3}", m.rate)).collect();
            format!("{} [{}]", r.scenario, v.join(" "))
        })
        .collect();
    t.line(
        2,
        format!(
            "Study 1 power (holm hochberg ols cvtmle ranksum): {}",
            table.join(", ")
        ),
    )
}

fn criterion_3(s: &[ScenarioReport]) -> Line {
    let mut t = Tally::default();
    let mut parts = Vec::new();
    for (r, want) in s.iter().zip([0.510, 0.887, 0.496, 0.764]) {
        let a1 = r.mean_weights.as_ref().expect("weights")[0];
        parts.push(format!("{} {a1:.3}", r.scenario));
        t.check(
            near(a1, want),
            format!("{} mean alpha1 {a1:.3} vs {want:.3}", r.scenario),
        );
    }
    t.line(3, format!("Study 1 mean alpha1: {}", parts.join(", ")))
}

fn criterion_4(null: &ScenarioReport, alt: &ScenarioReport) -> Line {
    let mut t = Tally::default();
    for m in &null.methods {
        let ok = (TYPE_I_BAND.0..=TYPE_I_BAND.1).contains(&m.rate);
        t.check(
            ok,
            format!(
                "Type I {} {:.3} outside [0.010, 0.040]",
                m.method.key(),
                m.rate
            ),
        );
    }
    let (rank, cv) = (
        rate(alt, Method::ObrienRankSum),
        rate(alt, Method::StabCvTmle),
    );
    t.check(
        near(rank, 0.529),
        format!("rank-sum power {rank:.3} vs 0.529"),
    );
    t.check(
        near(cv, 0.602),
        format!("stab_cvtmle power {cv:.3} vs 0.602"),
    );
    t.check(
        cv > rank,
        format!("stab_cvtmle power {cv:.3} <= rank-sum {rank:.3}"),
    );
    let ti: Vec<String> = null
        .methods
        .iter()
        .map(|m| format!("{} {:.3}", m.method.key(), m.rate))
        .collect();
    t.line(
        4,
        format!(
            "Study 2 Type I {}; power rank-sum {rank:.3}, stab_cvtmle {cv:.3}",
            ti.join(", ")
        ),
    )
}

fn criterion_5() -> Line {
    let start = Instant::now();
    let outcomes = run_validation(DEFAULT_SEED);
    let secs = start.elapsed().as_secs_f64();
    let mut t = Tally::default();
    for o in &outcomes {
        t.check(o.passed, format!("({}) {}: {}", o.id, o.name, o.detail));
    }
    t.check(secs < 60.0, format!("suite took {secs:.1}s"));
    let ids: String = outcomes.iter().map(|o| o.id).collect();
    t.line(5, format!("property suite ({ids}) in {secs:.1}s"))
}

fn criterion_6() -> Line {
    let large = |scenario: &str| {
        let mut cfg = ScenarioConfig::preset(Study::Study1, scenario).expect("preset");
        cfg.n = 5000;
        cfg.replications = 200;
        cfg.methods = vec![Method::StabCvTmle];
        cfg.jobs = PARALLEL_JOBS;
        run_scenario(&cfg)
            .expect("large-n run")
            .mean_weights
            .expect("weights")
    };
    let (s2, s1) = (large("S2"), large("S1"));
    let mut t = Tally::default();
    t.check(s2[0] > 0.8, format!("S2 mean alpha1 {:.3} <= 0.8", s2[0]));
    t.check(
        near(s1[0], 0.5) && near(s1[1], 0.5),
        format!(
            "S1 mean weights ({:.3}, {:.3}) not within 0.05 of (0.5, 0.5)",
            s1[0], s1[1]
        ),
    );
    t.line(
        6,
        format!(
            "n=5000: S2 mean alpha1 {:.3}, S1 mean weights ({:.3}, {:.3})",
            s2[0], s1[0], s1[1]
        ),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    eprintln!("acceptance: running built-in scenarios at seed {DEFAULT_SEED}");
    let study1: Vec<ScenarioReport> = Study::Study1
        .scenarios()
        .iter()
        .map(|s| run(Study::Study1, s))
        .collect();
    let null = run(Study::Study2, "global_null");
    let alt = run(Study::Study2, "calibrated_alternative");

    let lines = [
        criterion_1(&study1[0]),
        criterion_2(&study1),
        criterion_3(&study1),
        criterion_4(&null, &alt),
        criterion_5(),
        criterion_6(),
    ];
    for l in &lines {
        println!(
            "{} criterion {}: {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
