use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cosim_gym::experiment::{run_experiment, run_sweep, Execution, ExperimentSpec, Sweep};

fn experiment(c: &mut Criterion) {
    let spec = ExperimentSpec {
        n_repeats: 8,
        n_episodes: 100,
        ..Default::default()
    };
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| run_experiment(&spec, exec).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let base = ExperimentSpec::default();
    let mut group = c.benchmark_group("run_sweep_mass");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| run_sweep(Sweep::Mass, &base, None, None, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, experiment, sweep);
criterion_main!(benches);
