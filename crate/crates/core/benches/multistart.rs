use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cpd_core::generators::collinear_instance;
use cpd_core::{solve_multistart, Execution, SolverOptions};

fn multistart(c: &mut Criterion) {
    let inst = collinear_instance(30, 30, 30, 5, 0.5, 1)
        .unwrap()
        .with_noise(1e-3, 2)
        .unwrap();
    let mut group = c.benchmark_group("multistart");
    group.sample_size(10);
    for restarts in [1usize, 8] {
        for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let opts = SolverOptions {
                restarts,
                seed: 3,
                execution,
                ..SolverOptions::new(5)
            };
            group.bench_with_input(BenchmarkId::new(name, restarts), &opts, |b, opts| {
                b.iter(|| solve_multistart(&inst.tensor, opts).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, multistart);
criterion_main!(benches);
