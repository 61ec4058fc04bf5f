use std::f64::consts::TAU;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nonholo::controllability::loop_integral;
use nonholo::optimal::{shoot, ShootOptions};
use nonholo::{ExtremalProblem, InputSignal, Loop, Shape, SystemModel, VectorField};

fn oscillators() -> SystemModel {
    SystemModel::general_r2(VectorField::parse(&["x2^2", "-x1^2"]).unwrap()).unwrap()
}

fn simulate_example(c: &mut Criterion) {
    let sys = oscillators();
    let u = InputSignal::uniform(
        1.0,
        vec![
            Shape::Sinusoid { amplitude: 2.0, omega: TAU, phase: 0.0 },
            Shape::Sinusoid { amplitude: TAU, omega: TAU, phase: -TAU / 4.0 },
        ],
    )
    .unwrap();
    c.bench_function("simulate_oscillators_1e-4", |b| {
        b.iter(|| nonholo::simulate(&sys, black_box(&u), &[0.0; 3], 1.0, 1e-4).unwrap())
    });
}

fn loop_integrals(c: &mut Criterion) {
    let f = VectorField::parse(&["x2^2*x1", "-x1^3 + x2"]).unwrap();
    let gamma = Loop::circle([0.3, -0.2], 0.8);
    c.bench_function("loop_integral_cubic", |b| b.iter(|| loop_integral(&f, black_box(&gamma)).unwrap()));
}

fn shoot_classic(c: &mut Criterion) {
    let p = ExtremalProblem::energy(SystemModel::Classic, vec![0.0; 3], vec![0.0, 0.0, 1.0], 1.0).unwrap();
    let mut group = c.benchmark_group("optimal");
    group.sample_size(10);
    group.bench_function("shoot_classic", |b| b.iter(|| shoot(black_box(&p), &ShootOptions::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, simulate_example, loop_integrals, shoot_classic);
criterion_main!(benches);
