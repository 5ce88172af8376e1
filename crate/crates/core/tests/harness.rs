use gicshield::acopf::{evaluate_placement, EvalOptions};
use gicshield::harness::{
    brute_force, count_placements, run_benchmark, write_rows, Algorithm, BenchmarkOptions, BRUTE_FORCE_GUARD,
};
use gicshield::netmodel::parse_network;
use gicshield::{bundled, derive_dc_network, GicError, GmdScenario, Placement};

#[test]
fn zero_budget_is_one_evaluation() {
    let ac = bundled::case5();
    let dc = derive_dc_network(&ac).unwrap();
    let bf = brute_force(&ac, &dc, &GmdScenario::field(10.0, 45.0), 0, &EvalOptions::for_network(&ac), false).unwrap();
    assert_eq!(bf.table.len(), 1);
    assert_eq!(bf.best.placement, Placement::none(3));
}

#[test]
fn full_budget_on_three_substations_is_eight_evaluations() {
    let ac = bundled::case5();
    let dc = derive_dc_network(&ac).unwrap();
    let bf = brute_force(&ac, &dc, &GmdScenario::field(5.0, 45.0), 3, &EvalOptions::for_network(&ac), false).unwrap();
    assert_eq!(bf.table.len(), 8);
}

#[test]
fn case5_oracle_table_matches_the_regression_file() {
    let ac = bundled::case5();
    let dc = derive_dc_network(&ac).unwrap();
    let bf = brute_force(&ac, &dc, &GmdScenario::field(10.0, 45.0), 1, &EvalOptions::for_network(&ac), false).unwrap();
    let mut rdr = csv::Reader::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/regression/case5_e10_v1.csv")).unwrap();
    let frozen: Vec<(String, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(frozen.len(), bf.table.len());
    for ((z, f), r) in frozen.iter().zip(&bf.table) {
        assert_eq!(z, &r.placement.bitstring());
        assert!((f - r.objective).abs() <= 1e-6 * f, "{z}: {f} vs {}", r.objective);
    }
    // 001 and 100 tie; the smaller bit string wins.
    assert_eq!(bf.best.placement.bitstring(), "001");
}

#[test]
fn guard_stops_large_enumerations() {
    // Ten extra bus-less substations give 13 in total; 2^13 > the guard.
    let mut text = bundled::CASE5_TOML.to_string();
    for id in 4..=13 {
        text.push_str(&format!("\n[[substations]]\nid = {id}\na_ground = 1.0\nlatitude = 41.0\nlongitude = -89.0\n"));
    }
    let ac = parse_network(&text).unwrap();
    assert_eq!(ac.n_substations(), 13);
    let dc = derive_dc_network(&ac).unwrap();
    let err = brute_force(&ac, &dc, &GmdScenario::field(10.0, 45.0), 13, &EvalOptions::for_network(&ac), false).unwrap_err();
    assert!(matches!(err, GicError::GuardExceeded { needed: 8192, limit: BRUTE_FORCE_GUARD }), "{err}");
    assert_eq!(count_placements(13, 2), 1 + 13 + 78);
}

fn small_options(algorithms: Vec<Algorithm>, efields: Vec<f64>) -> BenchmarkOptions {
    BenchmarkOptions { efields, budgets: vec![1], algorithms, record_wall_time: false, jobs: 2, ..BenchmarkOptions::default() }
}

#[test]
fn enumerate_rows_are_the_oracle_minima() {
    let nets = vec![("case5_synth".to_string(), bundled::case5())];
    let rows = run_benchmark(&nets, &small_options(vec![Algorithm::Enumerate], vec![5.0, 15.0])).unwrap();
    assert_eq!(rows.len(), 2);
    let ac = &nets[0].1;
    let dc = derive_dc_network(ac).unwrap();
    for r in &rows {
        let bf = brute_force(ac, &dc, &GmdScenario::field(r.e, 45.0), 1, &EvalOptions::for_network(ac), false).unwrap();
        assert_eq!(r.status, "ok");
        assert!((r.objective - bf.best.objective).abs() <= 1e-9 * bf.best.objective);
        assert!((r.objective - r.gen_cost - r.shed_penalty).abs() <= 1e-8 * r.objective);
    }
}

#[test]
fn rows_survive_re_evaluation_and_respect_the_oracle() {
    let nets = vec![("case5_synth".to_string(), bundled::case5())];
    let opts = small_options(vec![Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate], vec![10.0]);
    let rows = run_benchmark(&nets, &opts).unwrap();
    let ac = &nets[0].1;
    let dc = derive_dc_network(ac).unwrap();
    let sc = GmdScenario::field(10.0, 45.0);
    let oracle = rows.iter().find(|r| r.algorithm == Algorithm::Enumerate).unwrap().objective;
    for r in &rows {
        let labels: Vec<i64> = r.placement.split(';').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        let idx: Vec<usize> = labels.iter().map(|l| ac.substations.iter().position(|s| s.label == *l).unwrap()).collect();
        let z = Placement::from_indices(ac.n_substations(), &idx);
        let f = evaluate_placement(ac, &dc, &sc, &z, 1, &EvalOptions::for_network(ac)).unwrap();
        assert!((f.objective - r.objective).abs() <= 1e-6 * r.objective, "{:?}", r);
        assert!(oracle <= r.objective, "{:?}", r);
    }
}

#[test]
fn zero_field_rows_agree_across_algorithms() {
    let nets = vec![("case5_synth".to_string(), bundled::case5())];
    let rows = run_benchmark(&nets, &small_options(vec![Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate], vec![0.0])).unwrap();
    for r in &rows {
        assert!((r.objective - rows[0].objective).abs() <= 1e-9 * rows[0].objective, "{rows:?}");
    }
}

#[test]
fn benchmark_csv_is_reproducible_and_ordered() {
    let nets = vec![("case5_synth".to_string(), bundled::case5())];
    let mut opts = small_options(vec![Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate], vec![5.0, 20.0]);
    opts.jobs = 4;
    let csv = |opts: &BenchmarkOptions| {
        let mut buf = Vec::new();
        write_rows(&run_benchmark(&nets, opts).unwrap(), &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = csv(&opts);
    opts.jobs = 1;
    let b = csv(&opts);
    assert_eq!(a, b);
    let mut lines = a.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance,E,direction,V,algorithm,objective,gen_cost,shed_penalty,placement,wall_time,iterations,status"
    );
    let algs: Vec<&str> = lines.map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(algs, ["admm", "sl", "enumerate", "admm", "sl", "enumerate"]);
}
