//! Benchmarks for the kernels that dominate identification, Monte Carlo
//! evaluation and the SDP inner loop.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use qreset_core::design::w_vector;
use qreset_core::linalg::{eigh, haar_unitary, HermitianMatrix, PureState};
use qreset_core::network::{build_link, InteractionUnitary};
use qreset_core::protocols::{evaluate, haar_interaction, w4};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::hint::black_box;

fn bench_haar_unitary(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    c.bench_function("haar_unitary_4", |b| {
        b.iter(|| black_box(haar_unitary(4, &mut rng)))
    });
}

fn bench_build_link(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let u = haar_interaction(2, 2, &mut rng);
    c.bench_function("build_link_n4", |b| {
        b.iter(|| black_box(build_link(&u, 4).unwrap()))
    });
}

fn bench_evaluate_w4(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let p = w4();
    let psi0 = PureState::haar(2, &mut rng);
    c.bench_function("evaluate_w4", |b| {
        b.iter_batched(
            || haar_interaction(2, 2, &mut rng),
            |u| black_box(evaluate(&p, &u, &psi0).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn bench_w_vector(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let u = haar_interaction(2, 2, &mut rng);
    c.bench_function("w_vector_n4", |b| b.iter(|| black_box(w_vector(&u, 4))));
}

fn bench_eigh(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let u = haar_unitary(128, &mut rng);
    // a Hermitian matrix with a known spread of eigenvalues
    let h = HermitianMatrix::symmetrized(&u.add(&u.adjoint()));
    c.bench_function("eigh_128", |b| b.iter(|| black_box(eigh(&h).unwrap())));
}

fn bench_sequential_n8(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let u = InteractionUnitary::new(2, 2, haar_unitary(4, &mut rng)).unwrap();
    let phi = PureState::haar(256, &mut rng);
    let psi = PureState::haar(2, &mut rng);
    c.bench_function("sequential_evolution_n8", |b| {
        b.iter(|| {
            black_box(
                qreset_core::network::sequential_evolution(
                    &u,
                    psi.amplitudes(),
                    phi.amplitudes(),
                    8,
                )
                .unwrap(),
            )
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_haar_unitary, bench_build_link, bench_evaluate_w4, bench_w_vector,
              bench_eigh, bench_sequential_n8
}
criterion_main!(benches);
