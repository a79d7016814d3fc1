//! Sequential against data-parallel execution of the chain and projection loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use u5mr_core::par::Execution;
use u5mr_core::project::{self, GlobalChangeDist};
use u5mr_core::sampler::{self, SamplerConfig};
use u5mr_core::synth::{self, SynthConfig};

fn bench(c: &mut Criterion) {
    let sim = synth::simulate(&SynthConfig::standard(8, 3)).expect("simulation");
    let mut g = c.benchmark_group("global_fit_8_countries");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let cfg = SamplerConfig {
            n_chains: 4,
            n_iter: 400,
            burn_in: 200,
            thin: 4,
            seed: 1,
            execution: exec,
            ..SamplerConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| sampler::run_global(&sim.model, cfg).expect("fit"))
        });
    }
    g.finish();

    let post = sampler::run_global(
        &sim.model,
        &SamplerConfig {
            n_chains: 4,
            n_iter: 2000,
            burn_in: 1000,
            thin: 2,
            seed: 2,
            ..SamplerConfig::default()
        },
    )
    .expect("fit");
    let dist = GlobalChangeDist { g: -0.05, v: 0.002 };
    let mut g = c.benchmark_group("projection_2000_draws");
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| project::project_coefficients(&sim.model, &post, 0, dist, 0.5, 7, exec).expect("projection"))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
