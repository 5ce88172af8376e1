use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gicshield::acopf::{evaluate_placement, EvalOptions};
use gicshield::{
    bundled, derive_dc_network, knapsack_closed, materialize_xi, sample_budgeted, solve_gic, GmdScenario, Placement,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn gic(c: &mut Criterion) {
    let mut g = c.benchmark_group("gic_solve");
    for name in bundled::NAMES {
        let ac = bundled::by_name(name).unwrap();
        let dc = derive_dc_network(&ac).unwrap();
        let xi = materialize_xi(&dc, &GmdScenario::field(10.0, 45.0)).unwrap();
        let z = Placement::from_indices(ac.n_substations(), &[0]);
        g.bench_function(name, |b| b.iter(|| solve_gic(&dc, black_box(&xi), &z).unwrap()));
    }
    g.finish();
}

fn evaluate(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate_placement");
    g.sample_size(10);
    for name in bundled::NAMES {
        let ac = bundled::by_name(name).unwrap();
        let dc = derive_dc_network(&ac).unwrap();
        let sc = GmdScenario::field(10.0, 45.0);
        let eval = EvalOptions::for_network(&ac);
        let z = Placement::none(ac.n_substations());
        g.bench_function(name, |b| b.iter(|| evaluate_placement(&ac, &dc, &sc, &z, 0, &eval).unwrap()));
    }
    g.finish();
}

fn knapsack(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("knapsack_closed/S=12", |b| {
        b.iter_batched(
            || {
                let lambda: Vec<f64> = (0..12).map(|_| rng.random_range(-10.0..10.0)).collect();
                let z_c: Vec<f64> = (0..12).map(|_| rng.random()).collect();
                (lambda, z_c)
            },
            |(lambda, z_c)| knapsack_closed(100.0, &lambda, &z_c, 3),
            BatchSize::SmallInput,
        )
    });
}

fn sampling(c: &mut Criterion) {
    let p: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("sample_budgeted/S=8,V=2", |b| b.iter(|| sample_budgeted(black_box(&p), 2, &mut rng)));
}

criterion_group!(benches, gic, evaluate, knapsack, sampling);
criterion_main!(benches);
