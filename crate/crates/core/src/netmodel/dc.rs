use serde::{Deserialize, Serialize};

use super::{AcNetwork, DcRole, WindingRole};
use crate::error::{GicError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DcNodeKind {
    /// Neutral point of an AC bus.
    Bus(usize),
    /// Grounding point of a substation.
    Substation(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcNode {
    pub id: usize,
    pub kind: DcNodeKind,
    /// Inverse grounding resistance, siemens. Zero except at substation nodes.
    pub a_ground: f64,
    /// (latitude, longitude) in degrees, inherited from the substation.
    pub coords: Option<(f64, f64)>,
}

impl DcNode {
    pub fn is_substation(&self) -> bool {
        matches!(self.kind, DcNodeKind::Substation(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcEdge {
    pub id: usize,
    /// File label of the declaring `dc_edges` record.
    pub label: i64,
    pub from: usize,
    pub to: usize,
    /// Conductance, siemens.
    pub gamma: f64,
    pub source_branch: usize,
    pub role: DcRole,
}

impl DcEdge {
    pub fn is_transformer_winding(&self) -> bool {
        matches!(self.role, DcRole::Winding(_))
    }
}

/// The GIC circuit: bus nodes `0..n_bus`, then one node per substation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcNetwork {
    pub nodes: Vec<DcNode>,
    pub edges: Vec<DcEdge>,
    /// DC node index of each substation's grounding point.
    pub substation_nodes: Vec<usize>,
}

impl DcNetwork {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_substations(&self) -> usize {
        self.substation_nodes.len()
    }

    /// Per-node grounding conductance `a_m (1 - z_m)` for a (possibly relaxed)
    /// placement over substations.
    pub fn effective_grounding(&self, z: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = self.nodes.iter().map(|n| n.a_ground).collect();
        for (s, &node) in self.substation_nodes.iter().enumerate() {
            a[node] *= 1.0 - z[s];
        }
        a
    }

    /// Connected components over nodes with at least one incident edge.
    /// Returns a component id per node (`None` for edgeless nodes) and the count.
    pub fn components(&self) -> (Vec<Option<usize>>, usize) {
        let n = self.n_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut touched = vec![false; n];
        for e in &self.edges {
            touched[e.from] = true;
            touched[e.to] = true;
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut comp = vec![None; n];
        let mut roots = Vec::new();
        for i in 0..n {
            if touched[i] {
                let r = find(&mut parent, i);
                let id = match roots.iter().position(|&x| x == r) {
                    Some(k) => k,
                    None => {
                        roots.push(r);
                        roots.len() - 1
                    }
                };
                comp[i] = Some(id);
            }
        }
        (comp, roots.len())
    }
}

/// Builds the GIC circuit from the AC network.
///
/// Lines become edges between the DC nodes of their end buses. Transformer
/// windings attach as follows (high side = branch `from_bus`):
/// high: high bus -> substation neutral; low: low bus -> neutral;
/// series: high bus -> low bus; common: low bus -> neutral.
/// Delta windings carry no GIC and get no edge.
pub fn derive_dc_network(ac: &AcNetwork) -> Result<DcNetwork> {
    let nb = ac.buses.len();
    let mut nodes = Vec::with_capacity(nb + ac.substations.len());
    for (i, b) in ac.buses.iter().enumerate() {
        let coords = b.substation.and_then(|s| sub_coords(ac, s));
        nodes.push(DcNode { id: i, kind: DcNodeKind::Bus(i), a_ground: 0.0, coords });
    }
    let mut substation_nodes = Vec::with_capacity(ac.substations.len());
    for (s, sub) in ac.substations.iter().enumerate() {
        if !(sub.a_ground > 0.0) {
            return Err(GicError::validation(format!(
                "substation {} is missing grounding data",
                sub.label
            )));
        }
        let id = nodes.len();
        substation_nodes.push(id);
        nodes.push(DcNode {
            id,
            kind: DcNodeKind::Substation(s),
            a_ground: sub.a_ground,
            coords: sub_coords(ac, s),
        });
    }

    let mut edges = Vec::with_capacity(ac.dc_edges.len());
    for (id, decl) in ac.dc_edges.iter().enumerate() {
        let br = &ac.branches[decl.branch];
        let (from, to) = match decl.role {
            DcRole::Line => (br.from_bus, br.to_bus),
            DcRole::Winding(role) => {
                let spec = br.transformer.as_ref().ok_or_else(|| {
                    GicError::validation(format!("dc edge {} has no transformer data", decl.label))
                })?;
                let neutral = substation_nodes[spec.substation];
                match role {
                    WindingRole::High => (br.from_bus, neutral),
                    WindingRole::Low => (br.to_bus, neutral),
                    WindingRole::Series => (br.from_bus, br.to_bus),
                    WindingRole::Common => (br.to_bus, neutral),
                }
            }
        };
        edges.push(DcEdge {
            id,
            label: decl.label,
            from,
            to,
            gamma: decl.gamma,
            source_branch: decl.branch,
            role: decl.role,
        });
    }

    let dc = DcNetwork { nodes, edges, substation_nodes };
    let (_, n_comp) = dc.components();
    if n_comp > 1 {
        return Err(GicError::validation(format!(
            "DC network is disconnected ({n_comp} components carry edges)"
        )));
    }
    Ok(dc)
}

fn sub_coords(ac: &AcNetwork, s: usize) -> Option<(f64, f64)> {
    let sub = &ac.substations[s];
    Some((sub.latitude?, sub.longitude?))
}
