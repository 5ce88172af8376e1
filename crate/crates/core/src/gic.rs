//! DC circuit solve for a fixed placement, and effective GIC per transformer.
//!
//! Edge currents are positive from `from` to `to`:
//! `I_l = gamma_l (v_from - v_to + xi_l)`. At every node the net inflow equals
//! the current sunk to ground, `a_m v_m (1 - z_m)`. Eliminating the currents
//! gives the grounded Laplacian system `(L + diag(a (1 - z))) v = b` with
//! `b_m = sum_in gamma xi - sum_out gamma xi`.

use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::linalg::{dense_lu_solve, SkylineMatrix};
use crate::netmodel::{AcNetwork, DcNetwork, Topology, TransformerSpec, WindingRole};
use crate::placement::Placement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GicSolution {
    /// Node voltages, volts.
    pub vd: Vec<f64>,
    /// Edge currents, amperes.
    pub id_flow: Vec<f64>,
    /// Current sunk to ground per node, amperes.
    pub ground_current: Vec<f64>,
    /// Max KCL mismatch relative to the largest edge current.
    pub kcl_residual: f64,
}

/// What to do with a DC component whose every grounding path is blocked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloatingPolicy {
    /// Fail with [`GicError::FloatingNetwork`].
    #[default]
    Reject,
    /// Fix the component's lowest-index node at 0 V. Edge currents are unique
    /// regardless of the reference, only node voltages depend on it.
    PinReference,
}

/// Solves the circuit for a binary placement, rejecting floating components.
pub fn solve_gic(dc: &DcNetwork, xi: &[f64], z: &Placement) -> Result<GicSolution> {
    solve_gic_with(dc, xi, &z.as_f64(), FloatingPolicy::Reject)
}

/// Solves the circuit for a placement over substations. `z` may be relaxed
/// (entries in `[0, 1]`); entries outside that range are rejected.
pub fn solve_gic_with(
    dc: &DcNetwork,
    xi: &[f64],
    z: &[f64],
    policy: FloatingPolicy,
) -> Result<GicSolution> {
    if xi.len() != dc.n_edges() {
        return Err(GicError::validation(format!(
            "xi has {} entries for {} dc edges",
            xi.len(),
            dc.n_edges()
        )));
    }
    if z.len() != dc.n_substations() {
        return Err(GicError::PlacementLength { got: z.len(), expected: dc.n_substations() });
    }
    if let Some((index, &value)) = z.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(GicError::NonBinary { index, value });
    }

    let n = dc.n_nodes();
    let grounding = dc.effective_grounding(z);
    let (comp, n_comp) = dc.components();

    // Unknowns: every node that has an edge, minus one pinned node per floating
    // component. Everything else sits at 0 V.
    let mut pinned = vec![false; n];
    for c in 0..n_comp {
        let members: Vec<usize> = (0..n).filter(|&i| comp[i] == Some(c)).collect();
        let grounded = members.iter().any(|&i| grounding[i] > 0.0);
        if !grounded {
            match policy {
                FloatingPolicy::Reject => return Err(GicError::FloatingNetwork { node: members[0] }),
                FloatingPolicy::PinReference => pinned[members[0]] = true,
            }
        }
    }
    let mut unknown = vec![usize::MAX; n];
    let mut n_unknown = 0;
    for i in 0..n {
        if comp[i].is_some() && !pinned[i] {
            unknown[i] = n_unknown;
            n_unknown += 1;
        }
    }

    let pattern = dc.edges.iter().filter_map(|e| {
        let (a, b) = (unknown[e.from], unknown[e.to]);
        (a != usize::MAX && b != usize::MAX).then_some((a, b))
    });
    let mut mat = SkylineMatrix::with_pattern(n_unknown, pattern);
    let mut rhs = vec![0.0; n_unknown];
    for i in 0..n {
        if unknown[i] != usize::MAX {
            mat.add(unknown[i], unknown[i], grounding[i]);
        }
    }
    for (e, &x) in dc.edges.iter().zip(xi) {
        let (a, b) = (unknown[e.from], unknown[e.to]);
        let g = e.gamma;
        if a != usize::MAX {
            mat.add(a, a, g);
            rhs[a] -= g * x;
        }
        if b != usize::MAX {
            mat.add(b, b, g);
            rhs[b] += g * x;
        }
        if a != usize::MAX && b != usize::MAX {
            mat.add(a, b, -g);
        }
    }

    let dense = mat.to_dense();
    let sol = match mat.cholesky() {
        Some(f) => f.solve(&rhs),
        None => {
            log::debug!("skyline Cholesky failed, falling back to dense LU");
            dense_lu_solve(dense, rhs).ok_or_else(|| {
                let node = (0..n).find(|&i| comp[i].is_some()).unwrap_or(0);
                GicError::FloatingNetwork { node }
            })?
        }
    };

    let vd: Vec<f64> = (0..n).map(|i| if unknown[i] == usize::MAX { 0.0 } else { sol[unknown[i]] }).collect();
    Ok(assemble_solution(dc, xi, &grounding, vd))
}

fn assemble_solution(dc: &DcNetwork, xi: &[f64], grounding: &[f64], vd: Vec<f64>) -> GicSolution {
    let id_flow: Vec<f64> = dc
        .edges
        .iter()
        .zip(xi)
        .map(|(e, &x)| e.gamma * (vd[e.from] - vd[e.to] + x))
        .collect();
    let ground_current: Vec<f64> = vd.iter().zip(grounding).map(|(v, a)| a * v).collect();
    let mut net_in = vec![0.0; vd.len()];
    for (e, &i) in dc.edges.iter().zip(&id_flow) {
        net_in[e.to] += i;
        net_in[e.from] -= i;
    }
    let scale = id_flow.iter().chain(&ground_current).fold(1.0f64, |m, v| m.max(v.abs()));
    let kcl_residual = net_in
        .iter()
        .zip(&ground_current)
        .fold(0.0f64, |m, (inflow, g)| m.max((inflow - g).abs()))
        / scale;
    GicSolution { vd, id_flow, ground_current, kcl_residual }
}

/// Θ as a linear form in the winding currents: `(dc edge, weight)` pairs.
pub fn theta_coefficients(spec: &TransformerSpec) -> Vec<(usize, f64)> {
    let edge = |role: WindingRole| spec.winding_edges[&role];
    let turns = |role: WindingRole| spec.turns.get(role).unwrap_or(1.0);
    match spec.topology {
        Topology::GwyeGwye => {
            let (nh, nl) = (turns(WindingRole::High), turns(WindingRole::Low));
            vec![(edge(WindingRole::High), 1.0), (edge(WindingRole::Low), nl / nh)]
        }
        Topology::GwyeGwyeAuto => {
            let (ns, nc) = (turns(WindingRole::Series), turns(WindingRole::Common));
            vec![(edge(WindingRole::Series), ns / (ns + nc)), (edge(WindingRole::Common), nc / (ns + nc))]
        }
        Topology::GwyeDeltaGsu => vec![(edge(WindingRole::High), 1.0)],
    }
}

/// Signed turns-weighted winding current of one transformer.
pub fn transformer_theta(spec: &TransformerSpec, sol: &GicSolution) -> f64 {
    theta_coefficients(spec).iter().map(|&(e, w)| w * sol.id_flow[e]).sum()
}

/// Θ for every transformer of the network, in transformer order.
pub fn transformer_thetas(ac: &AcNetwork, sol: &GicSolution) -> Vec<f64> {
    ac.transformer_specs().map(|t| transformer_theta(t, sol)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveGic {
    pub theta: Vec<f64>,
    pub i_eff: Vec<f64>,
}

impl EffectiveGic {
    /// Transformers whose effective GIC exceeds its limit: (transformer index, i_eff, limit).
    pub fn limit_violations(&self, ac: &AcNetwork) -> Vec<(usize, f64, f64)> {
        self.i_eff
            .iter()
            .zip(ac.transformer_specs())
            .enumerate()
            .filter(|(_, (&i, t))| i > t.i_eff_max)
            .map(|(k, (&i, t))| (k, i, t.i_eff_max))
            .collect()
    }
}

pub fn effective_gic(theta: &[f64]) -> EffectiveGic {
    EffectiveGic { theta: theta.to_vec(), i_eff: theta.iter().map(|t| t.abs()).collect() }
}

/// Convenience chain: circuit solve, Θ, effective GIC.
pub fn effective_gic_at(
    ac: &AcNetwork,
    dc: &DcNetwork,
    xi: &[f64],
    z: &[f64],
    policy: FloatingPolicy,
) -> Result<(GicSolution, EffectiveGic)> {
    let sol = solve_gic_with(dc, xi, z, policy)?;
    let eff = effective_gic(&transformer_thetas(ac, &sol));
    Ok((sol, eff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{DcEdge, DcNode, DcNodeKind, DcRole, Turns};
    use std::collections::BTreeMap;

    pub(crate) fn two_node() -> DcNetwork {
        DcNetwork {
            nodes: (0..2)
                .map(|i| DcNode { id: i, kind: DcNodeKind::Substation(i), a_ground: 1.0, coords: None })
                .collect(),
            edges: vec![DcEdge { id: 0, label: 1, from: 0, to: 1, gamma: 1.0, source_branch: 0, role: DcRole::Line }],
            substation_nodes: vec![0, 1],
        }
    }

    #[test]
    fn two_grounded_nodes() {
        let sol = solve_gic(&two_node(), &[1.0], &Placement(vec![0, 0])).unwrap();
        assert!((sol.id_flow[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((sol.vd[0] + 1.0 / 3.0).abs() < 1e-14);
        assert!((sol.vd[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!(sol.kcl_residual < 1e-12);
    }

    #[test]
    fn blocked_ground_stops_current() {
        let sol = solve_gic(&two_node(), &[1.0], &Placement(vec![1, 0])).unwrap();
        assert!(sol.id_flow[0].abs() < 1e-14);
        assert!((sol.vd[0] + 1.0).abs() < 1e-14);
        assert!(sol.vd[1].abs() < 1e-14);
        assert_eq!(sol.ground_current[0], 0.0);
    }

    #[test]
    fn zero_sources_zero_response() {
        let sol = solve_gic(&two_node(), &[0.0], &Placement(vec![0, 0])).unwrap();
        assert!(sol.vd.iter().chain(&sol.id_flow).all(|&v| v == 0.0));
    }

    #[test]
    fn all_blocked_is_floating_unless_pinned() {
        let dc = two_node();
        assert!(matches!(
            solve_gic(&dc, &[1.0], &Placement(vec![1, 1])),
            Err(GicError::FloatingNetwork { .. })
        ));
        let sol = solve_gic_with(&dc, &[1.0], &[1.0, 1.0], FloatingPolicy::PinReference).unwrap();
        assert!(sol.id_flow[0].abs() < 1e-14);
        assert_eq!(sol.vd[0], 0.0);
        assert!((sol.vd[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_placement_rejected() {
        let dc = two_node();
        assert!(matches!(
            solve_gic_with(&dc, &[1.0], &[0.0, 2.0], FloatingPolicy::Reject),
            Err(GicError::NonBinary { index: 1, .. })
        ));
    }

    fn spec(topology: Topology, turns: Turns, roles: &[WindingRole]) -> TransformerSpec {
        TransformerSpec {
            topology,
            turns,
            k_loss: 0.0,
            i_eff_max: 1.0,
            winding_edges: roles.iter().enumerate().map(|(i, &r)| (r, i)).collect::<BTreeMap<_, _>>(),
            substation: 0,
        }
    }

    fn with_currents(c: &[f64]) -> GicSolution {
        GicSolution { vd: vec![], id_flow: c.to_vec(), ground_current: vec![], kcl_residual: 0.0 }
    }

    #[test]
    fn theta_per_topology() {
        let gsu = spec(Topology::GwyeDeltaGsu, Turns::default(), &[WindingRole::High]);
        assert_eq!(transformer_theta(&gsu, &with_currents(&[-3.2])), -3.2);

        let gg = spec(
            Topology::GwyeGwye,
            Turns { high: Some(2.0), low: Some(1.0), ..Default::default() },
            &[WindingRole::High, WindingRole::Low],
        );
        assert_eq!(transformer_theta(&gg, &with_currents(&[1.0, -2.0])), 0.0);

        let auto = spec(
            Topology::GwyeGwyeAuto,
            Turns { series: Some(1.0), common: Some(1.0), ..Default::default() },
            &[WindingRole::Series, WindingRole::Common],
        );
        assert_eq!(transformer_theta(&auto, &with_currents(&[2.0, 4.0])), 3.0);
    }

    #[test]
    fn effective_gic_is_absolute_value() {
        let e = effective_gic(&[0.0, -3.2, 5.0]);
        assert_eq!(e.i_eff, vec![0.0, 3.2, 5.0]);
    }
}
