//! Microbenchmarks for the pipeline hot paths: rendering, estimator
//! forward passes, the grid-solver march, value-network gradient steps,
//! and conformal calibration.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use reachguard_core::fd::conformal_quantile;
use reachguard_core::levelset::{solve_hjbvi, zero_policy, AxisSpec, GridSpec};
use reachguard_core::nrt::{deepreach_loss, init_network, NrtSample, PolicyLattice};
use reachguard_core::plant::{PlantConfig, State};
use reachguard_core::sensor::{render, runway_catalog, CameraConfig, Cloud, EnvParams, TimeOfDay};
use reachguard_core::vbc::{estimate, EstimatorParams};

fn bench_render(c: &mut Criterion) {
    let cam = CameraConfig::default();
    let catalog = runway_catalog();
    let env = EnvParams::new(TimeOfDay::Night, Cloud::Overcast, 3);
    let x = State::new(3.0, 150.0, 0.1);
    c.bench_function("render_32x24", |b| {
        b.iter(|| black_box(render(black_box(&x), &env, &cam, &catalog[3])))
    });
}

fn bench_estimate(c: &mut Criterion) {
    let cam = CameraConfig::default();
    let params = EstimatorParams::init(&cam, &[64, 64], 1);
    let catalog = runway_catalog();
    let env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0);
    let obs = render(&State::new(1.0, 140.0, 0.05), &env, &cam, &catalog[0]);
    c.bench_function("estimate_768px_2x64", |b| {
        b.iter(|| black_box(estimate(black_box(&obs), &params).unwrap()))
    });
}

fn bench_solver_march(c: &mut Criterion) {
    let spec = GridSpec {
        px: AxisSpec::new(-15.0, 15.0, 51),
        py: AxisSpec::new(100.0, 250.0, 31),
        theta: AxisSpec::new(-0.52, 0.52, 31),
    };
    let cfg = PlantConfig::default();
    let env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0);
    let policy = zero_policy(&spec, &env);
    c.bench_function("hjbvi_march_T1_51x31x31", |b| {
        b.iter(|| black_box(solve_hjbvi(&spec, &policy, &cfg, 1.0).unwrap()))
    });
}

fn bench_nrt_loss(c: &mut Criterion) {
    let bounds = GridSpec::default();
    let cfg = PlantConfig::default();
    let env = EnvParams::new(TimeOfDay::Morning, Cloud::Clear, 0);
    let lattice = PolicyLattice::from_tables(vec![zero_policy(&bounds.coarsened(), &env)]);
    let params = init_network(&bounds, 10.0, &[64, 64], 30.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<NrtSample> = (0..128)
        .map(|_| NrtSample {
            state: bounds.sample_uniform(&mut rng),
            env,
            h: rng.random_range(0.0..10.0),
        })
        .collect();
    c.bench_function("deepreach_loss_batch128", |b| {
        b.iter(|| black_box(deepreach_loss(&batch, &params, &lattice, &cfg, 100.0).unwrap()))
    });
}

fn bench_conformal(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scores: Vec<f64> = (0..2000).map(|_| rng.random_range(0.0..1.0)).collect();
    c.bench_function("conformal_quantile_2000", |b| {
        b.iter(|| black_box(conformal_quantile(black_box(&scores), 0.05).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_render,
    bench_estimate,
    bench_solver_march,
    bench_nrt_loss,
    bench_conformal
);
criterion_main!(benches);
