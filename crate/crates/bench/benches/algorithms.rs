use criterion::{criterion_group, criterion_main, Criterion};
use gicshield::acopf::EvalOptions;
use gicshield::{brute_force, bundled, derive_dc_network, run_admm, run_sl, AdmmOptions, GmdScenario, SlOptions};

fn case5(c: &mut Criterion) {
    let ac = bundled::case5();
    let dc = derive_dc_network(&ac).unwrap();
    let sc = GmdScenario::field(10.0, 45.0);
    let mut g = c.benchmark_group("case5_synth_E10_V1");
    g.sample_size(10);
    g.bench_function("admm", |b| b.iter(|| run_admm(&ac, &dc, &sc, 1, &AdmmOptions::default()).unwrap()));
    g.bench_function("sl", |b| b.iter(|| run_sl(&ac, &dc, &sc, 1, &SlOptions::default()).unwrap()));
    let eval = EvalOptions::for_network(&ac);
    g.bench_function("enumerate", |b| b.iter(|| brute_force(&ac, &dc, &sc, 1, &eval, false).unwrap()));
    g.finish();
}

criterion_group!(benches, case5);
criterion_main!(benches);
