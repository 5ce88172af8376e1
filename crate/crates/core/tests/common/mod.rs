#![allow(dead_code)]

use gicshield::gic::{solve_gic_with, FloatingPolicy};
use gicshield::netmodel::{DcEdge, DcNetwork, DcNode, DcNodeKind, DcRole};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Connected random circuit with 2..=12 nodes, at least one of them a
/// grounded substation.
pub fn random_dc<R: Rng>(rng: &mut R) -> DcNetwork {
    let n = rng.random_range(2..=12);
    let n_sub = rng.random_range(1..=n);
    let mut nodes = Vec::with_capacity(n);
    let mut substation_nodes = Vec::new();
    for i in 0..n {
        if i < n_sub {
            nodes.push(DcNode {
                id: i,
                kind: DcNodeKind::Substation(i),
                a_ground: rng.random_range(0.1..10.0),
                coords: None,
            });
            substation_nodes.push(i);
        } else {
            nodes.push(DcNode { id: i, kind: DcNodeKind::Bus(i), a_ground: 0.0, coords: None });
        }
    }
    let mut edges = Vec::new();
    let push = |from: usize, to: usize, gamma: f64, edges: &mut Vec<DcEdge>| {
        let id = edges.len();
        edges.push(DcEdge { id, label: id as i64 + 1, from, to, gamma, source_branch: 0, role: DcRole::Line });
    };
    for i in 1..n {
        let j = rng.random_range(0..i);
        push(j, i, rng.random_range(0.05..20.0), &mut edges);
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            push(a, b, rng.random_range(0.05..20.0), &mut edges);
        }
    }
    DcNetwork { nodes, edges, substation_nodes }
}

pub fn random_xi<R: Rng>(dc: &DcNetwork, rng: &mut R) -> Vec<f64> {
    (0..dc.n_edges()).map(|_| rng.random_range(-100.0..100.0)).collect()
}

/// Random binary placement that leaves at least one substation grounded.
pub fn random_placement<R: Rng>(dc: &DcNetwork, rng: &mut R) -> Vec<f64> {
    let s = dc.n_substations();
    let mut z: Vec<f64> = (0..s).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    z[rng.random_range(0..s)] = 0.0;
    z
}

/// Node voltages from a dense LU solve of the grounded Laplacian.
pub fn dense_voltages(dc: &DcNetwork, xi: &[f64], z: &[f64]) -> Vec<f64> {
    let n = dc.n_nodes();
    let a = dc.effective_grounding(z);
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        g[(i, i)] += a[i];
    }
    for (e, &x) in dc.edges.iter().zip(xi) {
        let (f, t) = (e.from, e.to);
        g[(f, f)] += e.gamma;
        g[(t, t)] += e.gamma;
        g[(f, t)] -= e.gamma;
        g[(t, f)] -= e.gamma;
        rhs[f] -= e.gamma * x;
        rhs[t] += e.gamma * x;
    }
    // Nodes touching nothing sit at 0 V.
    for i in 0..n {
        if g[(i, i)] == 0.0 {
            g[(i, i)] = 1.0;
        }
    }
    g.lu().solve(&rhs).expect("grounded Laplacian is nonsingular").iter().copied().collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Superposition, ground-current conservation, blocked grounds carrying
/// nothing, and agreement with the dense solve. Returns the first failure.
pub fn check_physics<R: Rng>(rng: &mut R) -> Result<(), String> {
    let dc = random_dc(rng);
    let z = random_placement(&dc, rng);
    let x1 = random_xi(&dc, rng);
    let x2 = random_xi(&dc, rng);
    let (alpha, beta) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let solve = |xi: &[f64]| solve_gic_with(&dc, xi, &z, FloatingPolicy::Reject).map_err(|e| e.to_string());

    let s1 = solve(&x1)?;
    let s2 = solve(&x2)?;
    let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + beta * b).collect();
    let sm = solve(&mix)?;
    let combined: Vec<f64> = s1.vd.iter().zip(&s2.vd).map(|(a, b)| alpha * a + beta * b).collect();
    let d = rel_diff(&sm.vd, &combined);
    if d > 1e-8 {
        return Err(format!("superposition off by {d:.2e} ({} nodes)", dc.n_nodes()));
    }

    for s in [&s1, &s2, &sm] {
        let total: f64 = s.ground_current.iter().sum();
        // With a single grounded node every ground current is rounding noise,
        // so the short-circuit source currents set the floor of the scale.
        let l1: f64 = s.ground_current.iter().map(|v| v.abs()).sum();
        let source = dc.edges.iter().zip(&x1).chain(dc.edges.iter().zip(&x2)).fold(0.0f64, |m, (e, x)| m.max((e.gamma * x).abs()));
        if total.abs() > 1e-8 * l1.max(source) {
            return Err(format!("ground currents sum to {total:.3e} (l1 {l1:.3e})"));
        }
        for (k, &node) in dc.substation_nodes.iter().enumerate() {
            if z[k] == 1.0 && s.ground_current[node] != 0.0 {
                return Err(format!("blocked substation {k} sinks {}", s.ground_current[node]));
            }
        }
        if s.kcl_residual > 1e-9 {
            return Err(format!("kcl residual {:.2e}", s.kcl_residual));
        }
    }

    let dense = dense_voltages(&dc, &x1, &z);
    let d = rel_diff(&s1.vd, &dense);
    if d > 1e-10 {
        return Err(format!("sparse and dense voltages differ by {d:.2e}"));
    }
    Ok(())
}
