use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use noisefair::fairness::{ConstraintSpec, Correction, Metric};
use noisefair::noise_estimation::estimate_from_data;
use noisefair::trainer::{fit_constrained, fit_unconstrained, LossSpec, TrainConfig};
use noisefair_bench::noisy_adultlike;

fn unconstrained(c: &mut Criterion) {
    let (ds, est) = noisy_adultlike(2000, 0);
    let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    let mut group = c.benchmark_group("fit_unconstrained");
    for (name, spec) in [
        ("plain", LossSpec::plain()),
        ("surrogate", LossSpec::surrogate(est.clone())),
        ("group_peer", LossSpec::group_peer(est, 0.3)),
    ] {
        group.bench_function(name, |b| b.iter(|| fit_unconstrained(black_box(&ds), &spec, &cfg).unwrap()));
    }
    group.finish();
}

fn constrained(c: &mut Criterion) {
    let (ds, est) = noisy_adultlike(1000, 1);
    let cfg = TrainConfig { epochs: 10, outer_rounds: 10, ..TrainConfig::default() };
    let cspec = ConstraintSpec { metric: Metric::EqualOdds, delta: 0.02, correction: Correction::Surrogate(est.clone()) };
    let spec = LossSpec::surrogate(est);
    let mut group = c.benchmark_group("fit_constrained");
    group.sample_size(10);
    group.bench_function("surrogate_equal_odds", |b| {
        b.iter(|| fit_constrained(black_box(&ds), &spec, &cspec, &cfg, None).unwrap())
    });
    group.finish();
}

fn estimate(c: &mut Criterion) {
    let (ds, _) = noisy_adultlike(2000, 2);
    let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
    let mut group = c.benchmark_group("estimate");
    group.sample_size(10);
    group.bench_function("confident_joint_5_folds", |b| b.iter(|| estimate_from_data(black_box(&ds), 5, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, unconstrained, constrained, estimate);
criterion_main!(benches);
