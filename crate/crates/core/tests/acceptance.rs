//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! A FAIL is reported, not raised, so that the rest of the suite still runs;
//! set `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use gicshield::acopf::{build_acopf, evaluate_placement, flat_start, solve_acopf, Coupling, EvalOptions};
use gicshield::admm::{initial_state, AdmmOptions, DcBlock};
use gicshield::gic::{effective_gic_at, FloatingPolicy};
use gicshield::harness::{brute_force, run_benchmark, write_rows, Algorithm, BenchmarkOptions, BenchmarkRow};
use gicshield::nlpsolve::{check_gradients, NlpProblem};
use gicshield::slearn::{all_placements, expected_estimate, phi_gradient_exact};
use gicshield::{bundled, derive_dc_network, knapsack_closed, materialize_xi, run_admm, GmdScenario, Placement, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EFIELDS: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() {
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| !v.is_empty() && v != "0");
    let (c1, first_csv) = oracle_optimality();
    let checks: Vec<(usize, Verdict)> = vec![
        (1, c1),
        (2, blocker_efficacy()),
        (3, nrb_effectiveness()),
        (4, knapsack_exactness()),
        (5, estimator_unbiasedness()),
        (6, gic_physics()),
        (7, complementarity_fidelity()),
        (8, gradient_checks()),
        (9, determinism(&first_csv)),
    ];
    let mut failed = 0;
    for (k, v) in &checks {
        println!("criterion {k}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria pass", checks.len() - failed, checks.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}

fn small_networks() -> Vec<(String, gicshield::AcNetwork)> {
    vec![("case5_synth".into(), bundled::case5()), ("case12_synth".into(), bundled::case12())]
}

fn grid_options() -> BenchmarkOptions {
    BenchmarkOptions {
        efields: EFIELDS.to_vec(),
        direction: 45.0,
        budgets: vec![1, 2],
        algorithms: vec![Algorithm::Admm, Algorithm::Sl, Algorithm::Enumerate],
        jobs: 0,
        record_wall_time: false,
        ..BenchmarkOptions::default()
    }
}

fn benchmark_csv(rows: &[BenchmarkRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf).expect("in-memory CSV");
    buf
}

fn oracle_optimality() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let rows = run_benchmark(&small_networks(), &grid_options()).expect("benchmark grid");
    let elapsed = start.elapsed().as_secs_f64();

    let mut oracle: BTreeMap<(String, u64, usize), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.algorithm == Algorithm::Enumerate) {
        assert_eq!(r.status, "ok", "oracle cell did not converge: {r:?}");
        oracle.insert((r.instance.clone(), r.e.to_bits(), r.v), r.objective);
    }
    let mut misses = Vec::new();
    let mut cells = 0;
    for r in rows.iter().filter(|r| r.algorithm != Algorithm::Enumerate) {
        cells += 1;
        let best = oracle[&(r.instance.clone(), r.e.to_bits(), r.v)];
        let gap = r.objective / best - 1.0;
        if !(gap <= 0.01) {
            misses.push(format!("{} {} E={} V={} gap {:.3}", r.algorithm, r.instance, r.e, r.v, gap));
        }
    }
    let pass = misses.is_empty() && elapsed <= 300.0;
    let mut detail = format!("{}/{} cells within 1%, {:.1} s", cells - misses.len(), cells, elapsed);
    if !misses.is_empty() {
        detail.push_str("; misses: ");
        detail.push_str(&misses.join(", "));
    }
    (verdict(pass, detail), benchmark_csv(&rows))
}

fn blocker_efficacy() -> Verdict {
    let ac = bundled::case12();
    let dc = derive_dc_network(&ac).unwrap();
    let e = EFIELDS[EFIELDS.len() - 1];
    let sc = GmdScenario::field(e, 45.0);
    let eval = EvalOptions::for_network(&ac);
    let s = ac.n_substations();
    let none = evaluate_placement(&ac, &dc, &sc, &Placement::none(s), 0, &eval).unwrap();
    let all = evaluate_placement(&ac, &dc, &sc, &Placement(vec![1; s]), s, &eval).unwrap();
    let best = brute_force(&ac, &dc, &sc, 2, &eval, false).unwrap().best;
    let converged = [&none, &all, &best].iter().all(|r| r.solver_status == SolveStatus::OptimalTolerance);
    let (a, b, n) = (all.shed_penalty, best.shed_penalty, none.shed_penalty);
    let pass = converged && a <= b + 1e-6 && b + 1e-6 <= n && n > 1e-6;
    verdict(pass, format!("E={e}: all {a:.6}, best V=2 {b:.6} at {}, none {n:.6}", best.placement.bitstring()))
}

fn nrb_effectiveness() -> Verdict {
    let inst = bundled::STRESS;
    let ac = inst.network();
    let dc = derive_dc_network(&ac).unwrap();
    let sc = inst.scenario();
    let nrb = AdmmOptions::default();
    let mut constant = AdmmOptions::default();
    constant.nrb.enabled = false;
    let a = run_admm(&ac, &dc, &sc, inst.budget, &nrb).unwrap();
    let b = run_admm(&ac, &dc, &sc, inst.budget, &constant).unwrap();
    let pass = a.converged && b.converged && a.iterations() <= b.iterations();
    verdict(
        pass,
        format!(
            "{} E={} V={}: NRB {} iterations (converged {}), constant rho {} (converged {})",
            inst.network,
            inst.efield,
            inst.budget,
            a.iterations(),
            a.converged,
            b.iterations(),
            b.converged
        ),
    )
}

fn knapsack_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4b4e);
    let mut bad = 0;
    for _ in 0..1000 {
        let s = rng.random_range(1..=12);
        let rho = 10f64.powf(rng.random_range(-3.0..4.0));
        let lambda: Vec<f64> = (0..s).map(|_| rng.random_range(-1e3..1e3)).collect();
        let z_c: Vec<f64> = (0..s).map(|_| rng.random_range(0.0..=1.0)).collect();
        let v = rng.random_range(0..=s);
        let obj = |z: &[u8]| -> f64 {
            z.iter()
                .zip(lambda.iter().zip(&z_c))
                .map(|(&b, (&l, &c))| l * b as f64 + 0.5 * rho * (b as f64 - c).powi(2))
                .sum()
        };
        let got = knapsack_closed(rho, &lambda, &z_c, v);
        let best = (0u32..1 << s)
            .filter(|m| m.count_ones() as usize <= v)
            .map(|m| obj(&(0..s).map(|i| ((m >> i) & 1) as u8).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        if got.count() > v || obj(&got.0) != best {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{bad} of 1000 instances differ from enumeration"))
}

fn estimator_unbiasedness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5b);
    let mut worst = 0.0f64;
    for s in 1..=4 {
        let table: Vec<f64> = (0..1 << s).map(|_| rng.random_range(-1e3..1e3)).collect();
        let zs = all_placements(s);
        let f = |z: &Placement| table[zs.iter().position(|y| y == z).unwrap()];
        for _ in 0..50 {
            let p: Vec<f64> = (0..s).map(|_| rng.random_range(0.01..0.99)).collect();
            let e = expected_estimate(&p, f);
            let g = phi_gradient_exact(&p, f);
            for (a, b) in e.iter().zip(&g) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    verdict(worst <= 1e-10, format!("max relative deviation {worst:.2e} over S=1..4, 50 p each"))
}

fn gic_physics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x61c);
    let failures: Vec<String> = (0..100).filter_map(|_| common::check_physics(&mut rng).err()).collect();
    let mut detail = format!("{} of 100 random networks fail", failures.len());
    if !failures.is_empty() {
        detail.push_str(": ");
        detail.push_str(&failures.join("; "));
    }
    verdict(failures.is_empty(), detail)
}

fn complementarity_fidelity() -> Verdict {
    let (mut solves, mut converged) = (0, 0);
    let (mut worst_prod, mut worst_abs) = (0.0f64, 0.0f64);
    for name in bundled::NAMES {
        let ac = bundled::by_name(name).unwrap();
        let dc = derive_dc_network(&ac).unwrap();
        let eval = EvalOptions::for_network(&ac);
        let s = ac.n_substations();
        let placements: Vec<Placement> = (0..=s)
            .map(|k| if k == 0 { Placement::none(s) } else { Placement::from_indices(s, &[k - 1]) })
            .collect();
        for e in EFIELDS {
            let xi = materialize_xi(&dc, &GmdScenario::field(e, 45.0)).unwrap();
            for z in &placements {
                let (_, eff) = effective_gic_at(&ac, &dc, &xi, &z.as_f64(), FloatingPolicy::PinReference).unwrap();
                let res = solve_acopf(&ac, &Coupling::Free { theta: eff.theta.clone() }, None, &eval.nlp, eval.restarts)
                    .unwrap();
                solves += 1;
                if res.nlp.status != SolveStatus::OptimalTolerance {
                    continue;
                }
                converged += 1;
                let sol = &res.solution;
                for t in 0..ac.n_transformers() {
                    worst_prod = worst_prod.max(sol.s_plus[t] * sol.s_minus[t]);
                    worst_abs = worst_abs.max((sol.i_eff[t] - eff.theta[t].abs()).abs());
                }
            }
        }
    }
    let pass = converged > 0 && worst_prod <= 1e-6 && worst_abs <= 1e-5;
    verdict(
        pass,
        format!("{converged}/{solves} solves converged; max s+ s- {worst_prod:.2e}, max |I_eff - |theta|| {worst_abs:.2e}"),
    )
}

/// Uniform in the box where both bounds are finite, otherwise a unit-scale
/// perturbation of `center` clamped to whichever bound exists.
fn random_point(p: &NlpProblem, center: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..p.n_vars)
        .map(|i| {
            let (lo, hi) = (p.lower[i], p.upper[i]);
            if lo.is_finite() && hi.is_finite() {
                if hi > lo { rng.random_range(lo..=hi) } else { lo }
            } else {
                (center[i] + rng.random_range(-1.0..1.0) * (1.0 + center[i].abs())).clamp(lo, hi)
            }
        })
        .collect()
}

fn gradient_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x8c);
    let mut worst = 0.0f64;
    let mut problems = 0;
    let mut probe = |p: &NlpProblem, center: &[f64], rng: &mut ChaCha8Rng| {
        problems += 1;
        for _ in 0..10 {
            let x = random_point(p, center, rng);
            worst = worst.max(check_gradients(p, &x));
        }
    };
    for name in bundled::NAMES {
        let ac = bundled::by_name(name).unwrap();
        let dc = derive_dc_network(&ac).unwrap();
        let xi = materialize_xi(&dc, &GmdScenario::field(10.0, 45.0)).unwrap();
        let z = Placement::none(ac.n_substations());
        let (_, eff) = effective_gic_at(&ac, &dc, &xi, &z.as_f64(), FloatingPolicy::PinReference).unwrap();
        let nt = ac.n_transformers();
        let st = initial_state(&ac, &dc, &xi, 1, &AdmmOptions::default()).unwrap();
        let couplings = [
            Coupling::Fixed { i_eff: eff.i_eff.clone() },
            Coupling::Free { theta: eff.theta.clone() },
            Coupling::AdmmPenalized {
                mu: (0..nt).map(|_| rng.random_range(-50.0..50.0)).collect(),
                rho: 1e2,
                i_dc: eff.i_eff.clone(),
                i_base: st.i_base.clone(),
            },
        ];
        for c in &couplings {
            let (p, layout) = build_acopf(&ac, c).unwrap();
            let center = flat_start(&ac, &layout, &p, c);
            probe(&p, &center, &mut rng);
        }
        let block = DcBlock::new(&ac, &dc, xi.clone()).unwrap();
        let mut st = st;
        st.lambda.iter_mut().chain(st.mu.iter_mut()).for_each(|v| *v = rng.random_range(-50.0..50.0));
        let p = block.problem(&st);
        let center = block.start(&z.as_f64()).unwrap();
        probe(&p, &center, &mut rng);
    }
    verdict(worst <= 1e-5, format!("max discrepancy {worst:.2e} over {problems} problems x 10 points"))
}

fn determinism(first: &[u8]) -> Verdict {
    let rows = run_benchmark(&small_networks(), &grid_options()).expect("benchmark grid");
    let second = benchmark_csv(&rows);
    let lines = second.iter().filter(|&&b| b == b'\n').count();
    verdict(first == second.as_slice(), format!("two benchmark runs, {lines} CSV lines, identical: {}", first == second))
}
