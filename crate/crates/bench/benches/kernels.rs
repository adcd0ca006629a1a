use std::hint::black_box;

use cavlane_core::comm::reception_probability;
use cavlane_core::energy::fuel_rate;
use cavlane_core::longitudinal::eidm_accel;
use cavlane_core::metrics::ks_two_sample;
use cavlane_core::{
    run_replication, CommCoefficients, EidmParams, LeaderView, Policy, Scenario, VehicleClass, VtMicroCoefficients,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn controllers(c: &mut Criterion) {
    let p = EidmParams::default();
    let lead = LeaderView { gap: 18.0, speed: 25.0, accel: -1.0, class: VehicleClass::Cav };
    c.bench_function("eidm_accel", |b| {
        b.iter(|| eidm_accel(black_box(27.0), black_box(0.2), Some(black_box(&lead)), 0.6, &p))
    });
}

fn models(c: &mut Criterion) {
    let comm = CommCoefficients::builtin();
    c.bench_function("reception_probability", |b| {
        b.iter(|| reception_probability(black_box(120.0), black_box(40.0), 300.0, 10.0, &comm))
    });
    let fuel = VtMicroCoefficients::builtin();
    c.bench_function("fuel_rate", |b| b.iter(|| fuel_rate(black_box(28.0), black_box(0.4), &fuel)));
}

fn ks(c: &mut Criterion) {
    let a: Vec<f64> = (0..5000).map(|k| ((k * 7919) % 1000) as f64 / 100.0).collect();
    let bs: Vec<f64> = (0..5000).map(|k| ((k * 104_729) % 1200) as f64 / 100.0).collect();
    c.bench_function("ks_two_sample_5000", |b| b.iter(|| ks_two_sample(black_box(&a), black_box(&bs)).unwrap()));
}

fn engine(c: &mut Criterion) {
    let mut s = Scenario::default().with(Policy::Cav1, 0.6, 1);
    s.config.warmup_duration = 0.0;
    s.config.measured_duration = 120.0;
    let scn = s.validate().unwrap();
    let mut g = c.benchmark_group("engine");
    g.sample_size(10);
    g.bench_function("cav1_60_two_minutes", |b| b.iter(|| run_replication(&scn, 1).unwrap()));
    g.finish();
}

criterion_group!(benches, controllers, models, ks, engine);
criterion_main!(benches);
