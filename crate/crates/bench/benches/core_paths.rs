use std::hint::black_box;

use codesign_bench::{cartpole_policy, random_batch, rng};
use codesign_core::envs::{acrobot_step, cartpole_step, AcrobotDesign, CartPoleDesign, SyntheticDesign};
use codesign_core::policy::{loss, PpoConfig};
use codesign_core::schedule::{all_filters, total_units, HyperbandParams, ScheduleMode};
use codesign_core::search::{hyperband, Method, SearchOptions, SyntheticEvaluator};
use criterion::{criterion_group, criterion_main, Criterion};

fn schedule(c: &mut Criterion) {
    let params = HyperbandParams::new(81, 3, ScheduleMode::Table).unwrap();
    c.bench_function("schedule/all_filters_81_3", |b| {
        b.iter(|| all_filters(black_box(&params)).unwrap())
    });
    c.bench_function("schedule/total_units_81_3", |b| {
        b.iter(|| total_units(black_box(&params)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let policy = cartpole_policy(1);
    let batch = random_batch(&policy, 500, &mut rng(2));
    let cfg = PpoConfig::default();
    c.bench_function("policy/loss_forward_500", |b| {
        b.iter(|| loss(black_box(&policy), &batch, &cfg, false).unwrap())
    });
    c.bench_function("policy/loss_backward_500", |b| {
        b.iter(|| loss(black_box(&policy), &batch, &cfg, true).unwrap())
    });
}

fn envs(c: &mut Criterion) {
    let cp = CartPoleDesign::new(1.0).unwrap();
    c.bench_function("env/cartpole_step", |b| {
        b.iter(|| cartpole_step(black_box(&[0.01, 0.0, 0.02, 0.0]), 1, &cp, 0).unwrap())
    });
    c.bench_function("env/acrobot_step", |b| {
        b.iter(|| acrobot_step(black_box(&[0.05, -0.05, 0.0, 0.0]), 2, &AcrobotDesign::CLASSIC, 0).unwrap())
    });
}

fn search(c: &mut Criterion) {
    let params = HyperbandParams::new(27, 3, ScheduleMode::Table).unwrap();
    let bench = SyntheticDesign::default_benchmark(0.47, 0.1);
    c.bench_function("search/upnhb_r_synthetic_27_3", |b| {
        b.iter(|| {
            let mut eval = SyntheticEvaluator::for_method(bench.clone(), Method::UpnReversed, 3);
            hyperband(&mut eval, &params, &SearchOptions::new(Method::UpnReversed, 3, 1)).unwrap()
        })
    });
}

criterion_group!(benches, schedule, network, envs, search);
criterion_main!(benches);
