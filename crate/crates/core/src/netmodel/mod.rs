//! Grid data model.
//!
//! An [`AcNetwork`] is loaded from a TOML network file (see `docs/network-format.md`
//! and the bundled `case5_synth.toml`). All ids are re-indexed densely from 0 in
//! ascending file-label order; the original labels are kept on every record for
//! reporting. The DC (GIC) circuit is derived from the AC data plus the substation
//! grounding records by [`derive_dc_network`], and a [`GmdScenario`] turns into
//! per-edge induced voltage sources through [`materialize_xi`].

mod dc;
mod scenario;
mod schema;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dc::{derive_dc_network, DcEdge, DcNetwork, DcNode, DcNodeKind};
pub use scenario::{materialize_xi, GmdScenario, EARTH_RADIUS_KM};

use crate::error::{GicError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub label: i64,
    /// Index of the substation this bus sits in, if any.
    pub substation: Option<usize>,
    pub vr_min: f64,
    pub vr_max: f64,
    pub vi_min: f64,
    pub vi_max: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub p_demand: f64,
    pub q_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub label: i64,
    pub bus: usize,
    /// Linear cost, $/pu.
    pub c1: f64,
    /// Quadratic cost, $/pu².
    pub c2: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Line,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Grounded-wye / grounded-wye two-winding transformer.
    GwyeGwye,
    /// Grounded-wye autotransformer (series + common winding).
    GwyeGwyeAuto,
    /// Generator step-up, grounded wye on the high side, delta on the low side.
    GwyeDeltaGsu,
}

impl Topology {
    /// Winding roles that carry GIC for this topology.
    pub fn required_roles(self) -> &'static [WindingRole] {
        match self {
            Topology::GwyeGwye => &[WindingRole::High, WindingRole::Low],
            Topology::GwyeGwyeAuto => &[WindingRole::Series, WindingRole::Common],
            Topology::GwyeDeltaGsu => &[WindingRole::High],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindingRole {
    High,
    Low,
    Series,
    Common,
}

/// Winding turn counts; only the roles the topology needs are populated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Turns {
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub series: Option<f64>,
    pub common: Option<f64>,
}

impl Turns {
    pub fn get(&self, role: WindingRole) -> Option<f64> {
        match role {
            WindingRole::High => self.high,
            WindingRole::Low => self.low,
            WindingRole::Series => self.series,
            WindingRole::Common => self.common,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub topology: Topology,
    pub turns: Turns,
    /// Loss factor: `k_loss * |V| * I_eff` is the GIC reactive loss in pu when
    /// `|V|` is in pu and `I_eff` in amperes.
    pub k_loss: f64,
    /// Upper limit on effective GIC, amperes.
    pub i_eff_max: f64,
    /// Winding role -> dense DC edge index.
    pub winding_edges: BTreeMap<WindingRole, usize>,
    /// Substation whose neutral the grounded windings connect to.
    pub substation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub label: i64,
    pub from_bus: usize,
    pub to_bus: usize,
    pub g: f64,
    pub b: f64,
    pub b_charge: f64,
    pub s_max: f64,
    /// Angle-difference bounds, radians.
    pub theta_min: f64,
    pub theta_max: f64,
    pub kind: BranchKind,
    pub transformer: Option<TransformerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub label: i64,
    /// Inverse grounding resistance, siemens.
    pub a_ground: f64,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

/// Role of a declared DC edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DcRole {
    Line,
    Winding(WindingRole),
}

/// DC edge as declared in the network file, before endpoints are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcEdgeDecl {
    pub label: i64,
    pub branch: usize,
    pub role: DcRole,
    /// Conductance, siemens.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    pub base_mva: f64,
    /// Penalty per pu of shed or over-consumed power, $/pu.
    pub kappa: f64,
    pub nlp_tol: f64,
    pub nlp_max_outer: usize,
    pub nlp_max_inner: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            base_mva: 100.0,
            kappa: 1e5,
            nlp_tol: 1e-6,
            nlp_max_outer: 50,
            nlp_max_inner: 500,
        }
    }
}

/// Validated, immutable AC network plus the grounding and DC edge declarations
/// needed to derive the GIC circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcNetwork {
    pub config: NetworkConfig,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub substations: Vec<Substation>,
    pub dc_edges: Vec<DcEdgeDecl>,
    /// Branch indices of the transformers, in branch order. Every per-transformer
    /// vector in the crate is indexed by position in this list.
    pub transformers: Vec<usize>,
}

impl AcNetwork {
    pub fn n_substations(&self) -> usize {
        self.substations.len()
    }

    pub fn n_transformers(&self) -> usize {
        self.transformers.len()
    }

    pub fn transformer(&self, t: usize) -> &TransformerSpec {
        self.branches[self.transformers[t]]
            .transformer
            .as_ref()
            .expect("transformer list only holds transformer branches")
    }

    pub fn transformer_specs(&self) -> impl Iterator<Item = &TransformerSpec> {
        self.transformers.iter().map(|&b| {
            self.branches[b]
                .transformer
                .as_ref()
                .expect("transformer list only holds transformer branches")
        })
    }

    /// Substation labels for the entries of a placement vector that are set.
    pub fn placement_labels(&self, z: &[u8]) -> Vec<i64> {
        z.iter()
            .zip(&self.substations)
            .filter(|(&zi, _)| zi == 1)
            .map(|(_, s)| s.label)
            .collect()
    }

    /// Dense substation index for a file label.
    pub fn substation_index(&self, label: i64) -> Option<usize> {
        self.substations.iter().position(|s| s.label == label)
    }

    /// Builds a placement vector from substation labels.
    pub fn placement_from_labels(&self, labels: &[i64]) -> Result<Vec<u8>> {
        let mut z = vec![0u8; self.n_substations()];
        for &l in labels {
            let i = self
                .substation_index(l)
                .ok_or_else(|| GicError::validation(format!("unknown substation label {l}")))?;
            z[i] = 1;
        }
        Ok(z)
    }
}

/// Reads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<AcNetwork> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_network(&text)
}

/// Parses and validates network text in the documented TOML schema.
pub fn parse_network(text: &str) -> Result<AcNetwork> {
    if text.trim().is_empty() {
        return Err(GicError::Parse("empty network file".into()));
    }
    let file: schema::NetworkFile =
        toml::from_str(text).map_err(|e| GicError::Parse(e.to_string()))?;
    schema::build(file)
}
