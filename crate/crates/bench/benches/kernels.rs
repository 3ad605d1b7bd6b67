use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use semipde::adjoint::LossProblem;
use semipde::solver::solve;
use semipde_bench::{feature_batch, Fixture};

fn forward_solve(c: &mut Criterion) {
    let f = Fixture::case1(32, 200);
    c.bench_function("forward_solve_nx32", |b| {
        b.iter(|| solve(&f.model, black_box(&f.theta), &f.mechanism, &f.grid, &f.mesh).unwrap())
    });
}

fn loss_and_gradient(c: &mut Criterion) {
    let f = Fixture::case1(32, 200);
    let prob = LossProblem::new(&f.model, &f.grid, &f.mesh, &f.observations).unwrap();
    c.bench_function("loss_and_gradient_nx32_n200", |b| {
        b.iter(|| prob.loss_and_grad(black_box(&f.theta), &f.mechanism, 1e-4, None).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let f = Fixture::case1(32, 20);
    let net = f.mechanism.network().unwrap();
    let v = feature_batch(net.architecture().input_dim, 1024);
    let cot = feature_batch(net.architecture().output_dim, 1024);
    c.bench_function("network_forward_1024", |b| b.iter(|| net.forward_batch(black_box(v.view()))));
    let mut grad = vec![0.0; net.len()];
    c.bench_function("network_backward_1024", |b| {
        b.iter(|| net.backward_batch(black_box(v.view()), cot.view(), Some(&mut grad)))
    });
}

criterion_group!(benches, forward_solve, loss_and_gradient, network);
criterion_main!(benches);
