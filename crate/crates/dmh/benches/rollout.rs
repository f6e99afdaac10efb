//! Parallel vs sequential trial evaluation on a bundled-size instance.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dmh::crl::evaluate_policy;
use dmh::engine::EngineConfig;
use dmh::instance::{generate_instance, GeneratorParams};
use dmh::layout::Layout;
use dmh::policy::RandomPolicy;

fn bench_trials(c: &mut Criterion) {
    let layout = Arc::new(Layout::bundled_default());
    let instance = generate_instance(
        &GeneratorParams::default(),
        &layout,
        "bundled-default",
        "bench",
        1,
    )
    .unwrap();
    let config = EngineConfig::default();
    let mut group = c.benchmark_group("evaluate_30_trials");
    for &parallel in &[false, true] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &p| {
            b.iter(|| {
                evaluate_policy(
                    || RandomPolicy,
                    &instance,
                    &layout,
                    &config,
                    50.0,
                    30,
                    7,
                    p,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_trials);
criterion_main!(benches);
