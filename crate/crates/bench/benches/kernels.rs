// SPDX-License-Identifier: Apache-2.0
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsedag::sem::{self, CovarianceMatrix, SemParams};
use sparsedag::{cpdag_of, enumerate_class, expm, DagStructure};

fn random_dag(p: usize, rng: &mut ChaCha8Rng) -> SemParams {
    let b = DMatrix::from_fn(p, p, |i, j| {
        if i < j && rng.random_bool(0.4) {
            rng.random_range(0.5..1.5)
        } else {
            0.0
        }
    });
    SemParams::new(b, DVector::from_fn(p, |_, _| rng.random_range(0.5..1.5))).unwrap()
}

fn bench_expm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("expm");
    for p in [10, 20, 50] {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(0.0..0.2));
        group.bench_with_input(BenchmarkId::from_parameter(p), &a, |b, a| {
            b.iter(|| expm(black_box(a)))
        });
    }
    group.finish();
}

fn bench_profile_grad(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("nll_profile_grad");
    for p in [10, 20, 50] {
        let x = DMatrix::from_fn(p, 2 * p, |_, _| rng.random_range(-1.0..1.0));
        let s =
            CovarianceMatrix::new(&x * x.transpose() / (2 * p) as f64 + DMatrix::identity(p, p))
                .unwrap();
        let w = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(-0.1..0.1)
            }
        });
        group.bench_with_input(BenchmarkId::from_parameter(p), &(w, s), |b, (w, s)| {
            b.iter(|| sem::nll_profile_with_grad(black_box(w), s).unwrap())
        });
    }
    group.finish();
}

fn bench_enumerate(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("enumerate_class");
    group.sample_size(10);
    for p in [5, 7, 8] {
        let theta = sem::precision_of(&random_dag(p, &mut rng)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(p), &theta, |b, t| {
            b.iter(|| enumerate_class(black_box(t), 1e-8).unwrap())
        });
    }
    group.finish();
}

fn bench_cpdag(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("cpdag_of");
    for p in [10, 50, 100] {
        let g = DagStructure::from_matrix(random_dag(p, &mut rng).b()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(p), &g, |b, g| {
            b.iter(|| cpdag_of(black_box(g)))
        });
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_expm,
    bench_profile_grad,
    bench_enumerate,
    bench_cpdag
);
criterion_main!(kernels);
