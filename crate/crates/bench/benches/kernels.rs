use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mast_core::networks::plain;
use mast_core::numerics::{Gradients, Matrix};
use mast_core::sparse_topology::{evolve_with_fraction, random_init_mask, EvolutionGroup, ParamStore};
use mast_core::targets::td_lambda_targets;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Batch of 32 episodes x 20 steps through a 64x64 layer.
    let x = Matrix::uniform(640, 64, 1.0, &mut rng);
    let w = Matrix::uniform(64, 64, 1.0, &mut rng);
    c.bench_function("matmul_t 640x64 * 64x64", |b| b.iter(|| black_box(x.matmul_t(&w).unwrap())));
}

fn gru_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = Matrix::uniform(32, 64, 1.0, &mut rng);
    let x = Matrix::uniform(32, 64, 1.0, &mut rng);
    let w: Vec<Matrix> = (0..3).map(|_| Matrix::uniform(64, 128, 0.1, &mut rng)).collect();
    let bias: Vec<Matrix> = (0..3).map(|_| Matrix::zeros(1, 64)).collect();
    c.bench_function("gru step batch 32 hidden 64", |b| {
        b.iter(|| {
            black_box(
                plain::gru(&x, &h, [&w[0], &w[1], &w[2]], [&bias[0], &bias[1], &bias[2]]).unwrap(),
            )
        })
    });
}

fn evolve(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new(0);
    let ids: Vec<_> = (0..4)
        .map(|i| store.add_sparse(format!("w{i}"), Matrix::uniform(64, 128, 1.0, &mut rng)))
        .collect();
    let group = EvolutionGroup::new("agents", &store, ids.clone(), 0.9).unwrap();
    random_init_mask(&mut store, &group, &mut rng).unwrap();
    let mut grads = Gradients::new();
    for &id in &ids {
        grads.insert(id, Matrix::uniform(64, 128, 1.0, &mut rng));
    }
    c.bench_function("evolve 32k weights S=0.9 zeta=0.5", |b| {
        b.iter_batched(
            || store.clone(),
            |mut s| black_box(evolve_with_fraction(&mut s, &group, &grads, 0.5).unwrap()),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn td_lambda(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rewards: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let boots: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("td lambda 20 steps", |b| {
        b.iter(|| black_box(td_lambda_targets(&rewards, &boots, 0.99, 0.8).unwrap()))
    });
}

criterion_group!(benches, matmul, gru_step, evolve, td_lambda);
criterion_main!(benches);
