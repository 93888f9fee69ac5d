use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use censusflow::simulate::{simulate, ServiceTime, StageModel};

fn stages(proc_workers: usize) -> Vec<StageModel> {
    vec![
        StageModel::deterministic("pre", 1.6, 14),
        StageModel::deterministic("proc", 12.5, proc_workers),
        StageModel::deterministic("post", 7.2, 14),
    ]
}

fn throughput(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for n in [10_000usize, 100_000] {
        g.bench_with_input(BenchmarkId::new("deterministic", n), &n, |b, &n| {
            b.iter(|| simulate(black_box(n), &stages(9), 0).unwrap())
        });
    }
    let mut random = stages(9);
    for s in &mut random {
        s.service = ServiceTime::Exponential {
            mean: s.service.mean(),
        };
    }
    g.bench_function("exponential/100000", |b| {
        b.iter(|| simulate(100_000, &random, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
