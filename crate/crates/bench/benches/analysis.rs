use aoi_core::presets::{
    large_population_setting, small_validation_setting, LARGE_POPULATION_THETA,
};
use aoi_core::{
    approx_metrics, avg_success_probs, baseline_policy, battery_steady_state, exact_avg_aoi,
    m1_transition_matrix, Baseline, DecodingMode, ExactOptions, Simulation, TransmissionPolicy,
};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

fn approx_large(c: &mut Criterion) {
    let mut g = c.benchmark_group("approx_eval_u1000_e8");
    let policy = TransmissionPolicy::new(vec![0.0, 0.0, 0.0, 0.7, 1.0, 1.0, 1.0, 1.0]).unwrap();
    for mode in [DecodingMode::NoCapture, DecodingMode::Capture] {
        let config = large_population_setting(2.1, mode).unwrap();
        g.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| approx_metrics(black_box(&config), &policy, LARGE_POPULATION_THETA).unwrap())
        });
    }
    g.finish();
}

fn capture_success(c: &mut Criterion) {
    let config = large_population_setting(2.5, DecodingMode::Capture).unwrap();
    let policy = baseline_policy(Baseline::AlwaysTransmit, 8);
    let nu = battery_steady_state(&m1_transition_matrix(&config, &policy).unwrap()).unwrap();
    c.bench_function("capture_wbar_u1000_e8", |b| {
        b.iter(|| avg_success_probs(black_box(&config), &policy, &nu))
    });
}

fn exact_small(c: &mut Criterion) {
    let config = small_validation_setting(1.0, DecodingMode::Capture).unwrap();
    let policy = baseline_policy(Baseline::AlwaysTransmit, 2);
    let mut g = c.benchmark_group("exact_solve_u30_e2");
    g.sample_size(10);
    g.bench_function("uniform", |b| {
        b.iter(|| exact_avg_aoi(black_box(&config), &policy, &ExactOptions::default()).unwrap())
    });
    g.finish();
}

fn simulator_slots(c: &mut Criterion) {
    let config = small_validation_setting(1.0, DecodingMode::Capture).unwrap();
    let policy = baseline_policy(Baseline::AlwaysTransmit, 2);
    c.bench_function("simulate_10k_slots_u30", |b| {
        b.iter_batched(
            || Simulation::new(&config, &policy, 1).unwrap(),
            |mut sim| {
                for _ in 0..10_000 {
                    black_box(sim.step());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, approx_large, capture_success, exact_small, simulator_slots);
criterion_main!(benches);
