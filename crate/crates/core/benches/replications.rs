use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stabcv::harness::{ScenarioConfig, Study};
use stabcv::par::parallel_enabled;
use stabcv::run_scenario;

fn config(jobs: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset(Study::Study1, "S4").expect("preset");
    cfg.replications = 32;
    cfg.mc_draws = 1000;
    cfg.n_perm = 500;
    cfg.jobs = jobs;
    cfg
}

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("study1_s4_32_reps");
    group.sample_size(10);
    let paths: &[(&str, usize)] = if parallel_enabled() {
        &[("sequential", 1), ("parallel", 0)]
    } else {
        &[("sequential", 1)]
    };
    for &(name, jobs) in paths {
        let cfg = config(jobs);
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(run_scenario(cfg).expect("run")))
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
