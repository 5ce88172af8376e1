//! On-disk network schema and its validation into [`AcNetwork`].

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_PI_2;

use serde::Deserialize;

use super::{
    AcNetwork, Branch, BranchKind, Bus, DcEdgeDecl, DcRole, Generator, NetworkConfig, Substation,
    Topology, TransformerSpec, Turns, WindingRole,
};
use crate::error::{GicError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct NetworkFile {
    #[serde(default)]
    config: ConfigRec,
    buses: Vec<BusRec>,
    #[serde(default)]
    generators: Vec<GenRec>,
    #[serde(default)]
    branches: Vec<BranchRec>,
    #[serde(default)]
    transformers: Vec<TransformerRec>,
    #[serde(default)]
    substations: Vec<SubstationRec>,
    #[serde(default)]
    dc_edges: Vec<DcEdgeRec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRec {
    #[serde(default = "default_name")]
    name: String,
    #[serde(default = "default_base_mva")]
    base_mva: f64,
    #[serde(default = "default_kappa")]
    kappa: f64,
    #[serde(default = "default_tol")]
    nlp_tol: f64,
    #[serde(default = "default_outer")]
    nlp_max_outer: usize,
    #[serde(default = "default_inner")]
    nlp_max_inner: usize,
}

fn default_name() -> String {
    NetworkConfig::default().name
}
fn default_base_mva() -> f64 {
    NetworkConfig::default().base_mva
}
fn default_kappa() -> f64 {
    NetworkConfig::default().kappa
}
fn default_tol() -> f64 {
    NetworkConfig::default().nlp_tol
}
fn default_outer() -> usize {
    NetworkConfig::default().nlp_max_outer
}
fn default_inner() -> usize {
    NetworkConfig::default().nlp_max_inner
}

impl Default for ConfigRec {
    fn default() -> Self {
        Self {
            name: default_name(),
            base_mva: default_base_mva(),
            kappa: default_kappa(),
            nlp_tol: default_tol(),
            nlp_max_outer: default_outer(),
            nlp_max_inner: default_inner(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRec {
    id: i64,
    substation: Option<i64>,
    vr_min: f64,
    vr_max: f64,
    vi_min: f64,
    vi_max: f64,
    #[serde(default)]
    g_shunt: f64,
    #[serde(default)]
    b_shunt: f64,
    #[serde(default)]
    p_demand: f64,
    #[serde(default)]
    q_demand: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenRec {
    id: i64,
    bus: i64,
    c1: f64,
    #[serde(default)]
    c2: f64,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRec {
    id: i64,
    from_bus: i64,
    to_bus: i64,
    g: f64,
    b: f64,
    #[serde(default)]
    b_charge: f64,
    s_max: f64,
    theta_min: f64,
    theta_max: f64,
    kind: BranchKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerRec {
    branch: i64,
    topology: Topology,
    n_high: Option<f64>,
    n_low: Option<f64>,
    n_series: Option<f64>,
    n_common: Option<f64>,
    k_loss: f64,
    i_eff_max: f64,
    #[serde(default)]
    winding_edges: BTreeMap<WindingRole, i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubstationRec {
    id: i64,
    a_ground: Option<f64>,
    latitude: Option<f64>,
    longitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RoleRec {
    Line,
    High,
    Low,
    Series,
    Common,
}

impl From<RoleRec> for DcRole {
    fn from(r: RoleRec) -> Self {
        match r {
            RoleRec::Line => DcRole::Line,
            RoleRec::High => DcRole::Winding(WindingRole::High),
            RoleRec::Low => DcRole::Winding(WindingRole::Low),
            RoleRec::Series => DcRole::Winding(WindingRole::Series),
            RoleRec::Common => DcRole::Winding(WindingRole::Common),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DcEdgeRec {
    id: i64,
    branch: i64,
    role: RoleRec,
    gamma: f64,
}

/// Sorted-label index for one record family; rejects duplicates.
fn index_labels(kind: &str, labels: impl Iterator<Item = i64>) -> Result<HashMap<i64, usize>> {
    let mut sorted: Vec<i64> = labels.collect();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(GicError::validation(format!("duplicate {kind} id {}", w[0])));
    }
    Ok(sorted.into_iter().enumerate().map(|(i, l)| (l, i)).collect())
}

fn resolve(map: &HashMap<i64, usize>, kind: &str, label: i64, ctx: &str) -> Result<usize> {
    map.get(&label)
        .copied()
        .ok_or_else(|| GicError::validation(format!("{ctx} references unknown {kind} {label}")))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(GicError::Validation(msg()))
    }
}

fn finite(values: &[f64], ctx: impl Fn() -> String) -> Result<()> {
    ensure(values.iter().all(|v| v.is_finite()), || format!("{}: non-finite value", ctx()))
}

pub(super) fn build(mut file: NetworkFile) -> Result<AcNetwork> {
    let c = &file.config;
    ensure(c.base_mva > 0.0, || "config.base_mva must be positive".into())?;
    ensure(c.kappa >= 0.0 && c.kappa.is_finite(), || "config.kappa must be finite and >= 0".into())?;
    ensure(c.nlp_tol > 0.0, || "config.nlp_tol must be positive".into())?;
    let config = NetworkConfig {
        name: c.name.clone(),
        base_mva: c.base_mva,
        kappa: c.kappa,
        nlp_tol: c.nlp_tol,
        nlp_max_outer: c.nlp_max_outer,
        nlp_max_inner: c.nlp_max_inner,
    };

    file.buses.sort_by_key(|b| b.id);
    file.generators.sort_by_key(|g| g.id);
    file.branches.sort_by_key(|b| b.id);
    file.substations.sort_by_key(|s| s.id);
    file.dc_edges.sort_by_key(|e| e.id);
    file.transformers.sort_by_key(|t| t.branch);

    let bus_ix = index_labels("bus", file.buses.iter().map(|b| b.id))?;
    let gen_ix = index_labels("generator", file.generators.iter().map(|g| g.id))?;
    let br_ix = index_labels("branch", file.branches.iter().map(|b| b.id))?;
    let sub_ix = index_labels("substation", file.substations.iter().map(|s| s.id))?;
    let dc_ix = index_labels("dc edge", file.dc_edges.iter().map(|e| e.id))?;
    index_labels("transformer branch", file.transformers.iter().map(|t| t.branch))?;
    debug_assert_eq!(gen_ix.len(), file.generators.len());

    let mut substations = Vec::with_capacity(file.substations.len());
    for s in &file.substations {
        let a = s.a_ground.ok_or_else(|| {
            GicError::validation(format!("substation {} is missing grounding data (a_ground)", s.id))
        })?;
        ensure(a > 0.0 && a.is_finite(), || {
            format!("substation {}: a_ground must be positive, got {a}", s.id)
        })?;
        ensure(s.latitude.is_some() == s.longitude.is_some(), || {
            format!("substation {}: latitude and longitude must be given together", s.id)
        })?;
        substations.push(Substation {
            label: s.id,
            a_ground: a,
            latitude: s.latitude,
            longitude: s.longitude,
        });
    }

    let mut buses = Vec::with_capacity(file.buses.len());
    for b in &file.buses {
        let ctx = || format!("bus {}", b.id);
        finite(
            &[b.vr_min, b.vr_max, b.vi_min, b.vi_max, b.g_shunt, b.b_shunt, b.p_demand, b.q_demand],
            ctx,
        )?;
        ensure(b.vr_min <= b.vr_max, || format!("bus {}: vr_min > vr_max", b.id))?;
        ensure(b.vi_min <= b.vi_max, || format!("bus {}: vi_min > vi_max", b.id))?;
        ensure(b.vr_max > 0.0, || format!("bus {}: vr_max must be positive", b.id))?;
        let substation = match b.substation {
            Some(l) => Some(resolve(&sub_ix, "substation", l, &format!("bus {}", b.id))?),
            None => None,
        };
        buses.push(Bus {
            label: b.id,
            substation,
            vr_min: b.vr_min,
            vr_max: b.vr_max,
            vi_min: b.vi_min,
            vi_max: b.vi_max,
            g_shunt: b.g_shunt,
            b_shunt: b.b_shunt,
            p_demand: b.p_demand,
            q_demand: b.q_demand,
        });
    }

    let mut generators = Vec::with_capacity(file.generators.len());
    for g in &file.generators {
        let ctx = format!("generator {}", g.id);
        finite(&[g.c1, g.c2, g.p_min, g.p_max, g.q_min, g.q_max], || ctx.clone())?;
        ensure(g.p_min <= g.p_max, || format!("{ctx}: p_min > p_max"))?;
        ensure(g.q_min <= g.q_max, || format!("{ctx}: q_min > q_max"))?;
        ensure(g.c2 >= 0.0, || format!("{ctx}: c2 must be >= 0"))?;
        generators.push(Generator {
            label: g.id,
            bus: resolve(&bus_ix, "bus", g.bus, &ctx)?,
            c1: g.c1,
            c2: g.c2,
            p_min: g.p_min,
            p_max: g.p_max,
            q_min: g.q_min,
            q_max: g.q_max,
        });
    }

    let mut branches = Vec::with_capacity(file.branches.len());
    for b in &file.branches {
        let ctx = format!("branch {}", b.id);
        finite(&[b.g, b.b, b.b_charge, b.s_max, b.theta_min, b.theta_max], || ctx.clone())?;
        let from_bus = resolve(&bus_ix, "bus", b.from_bus, &ctx)?;
        let to_bus = resolve(&bus_ix, "bus", b.to_bus, &ctx)?;
        ensure(from_bus != to_bus, || format!("{ctx}: from_bus equals to_bus"))?;
        ensure(b.s_max > 0.0, || format!("{ctx}: s_max must be positive"))?;
        ensure(b.theta_min <= b.theta_max, || format!("{ctx}: theta_min > theta_max"))?;
        ensure(b.theta_min > -FRAC_PI_2 && b.theta_max < FRAC_PI_2, || {
            format!("{ctx}: angle bounds must lie strictly inside (-pi/2, pi/2)")
        })?;
        branches.push(Branch {
            label: b.id,
            from_bus,
            to_bus,
            g: b.g,
            b: b.b,
            b_charge: b.b_charge,
            s_max: b.s_max,
            theta_min: b.theta_min,
            theta_max: b.theta_max,
            kind: b.kind,
            transformer: None,
        });
    }

    let mut dc_edges = Vec::with_capacity(file.dc_edges.len());
    for e in &file.dc_edges {
        let ctx = format!("dc edge {}", e.id);
        ensure(e.gamma.is_finite() && e.gamma > 0.0, || {
            format!("{ctx}: conductance gamma must be positive, got {}", e.gamma)
        })?;
        let branch = resolve(&br_ix, "branch", e.branch, &ctx)?;
        let role = DcRole::from(e.role);
        let is_line = branches[branch].kind == BranchKind::Line;
        ensure(is_line == (role == DcRole::Line), || {
            format!("{ctx}: role does not match the kind of branch {}", e.branch)
        })?;
        dc_edges.push(DcEdgeDecl { label: e.id, branch, role, gamma: e.gamma });
    }

    for t in &file.transformers {
        let ctx = format!("transformer on branch {}", t.branch);
        let bi = resolve(&br_ix, "branch", t.branch, &ctx)?;
        ensure(branches[bi].kind == BranchKind::Transformer, || {
            format!("{ctx}: branch kind is not transformer")
        })?;
        ensure(t.k_loss.is_finite() && t.k_loss >= 0.0, || format!("{ctx}: k_loss must be >= 0"))?;
        ensure(t.i_eff_max.is_finite() && t.i_eff_max > 0.0, || {
            format!("{ctx}: i_eff_max must be positive")
        })?;
        let turns = Turns { high: t.n_high, low: t.n_low, series: t.n_series, common: t.n_common };
        let required = t.topology.required_roles();
        for &role in required {
            let n = turns.get(role);
            let needs_turns = t.topology != Topology::GwyeDeltaGsu;
            if needs_turns {
                ensure(n.is_some_and(|n| n > 0.0 && n.is_finite()), || {
                    format!("{ctx}: {role:?} winding needs a positive turn count")
                })?;
            }
        }
        ensure(!t.winding_edges.is_empty(), || format!("{ctx}: missing winding_edges mapping"))?;
        let roles: Vec<WindingRole> = t.winding_edges.keys().copied().collect();
        ensure(roles == required, || {
            format!("{ctx}: winding_edges must cover exactly {required:?}, got {roles:?}")
        })?;
        let mut winding_edges = BTreeMap::new();
        for (&role, &label) in &t.winding_edges {
            let ei = resolve(&dc_ix, "dc edge", label, &ctx)?;
            let decl = &dc_edges[ei];
            ensure(decl.branch == bi && decl.role == DcRole::Winding(role), || {
                format!("{ctx}: dc edge {label} is not the {role:?} winding of this branch")
            })?;
            winding_edges.insert(role, ei);
        }
        let high = branches[bi].from_bus;
        let substation = buses[high].substation.ok_or_else(|| {
            GicError::validation(format!(
                "{ctx}: high-side bus {} has no substation, so the neutral has no grounding data",
                buses[high].label
            ))
        })?;
        branches[bi].transformer = Some(TransformerSpec {
            topology: t.topology,
            turns,
            k_loss: t.k_loss,
            i_eff_max: t.i_eff_max,
            winding_edges,
            substation,
        });
    }

    for b in &branches {
        ensure((b.kind == BranchKind::Transformer) == b.transformer.is_some(), || {
            format!("branch {}: transformer record present iff kind = transformer", b.label)
        })?;
        if b.kind == BranchKind::Line {
            let n = dc_edges
                .iter()
                .filter(|e| branches[e.branch].label == b.label && e.role == DcRole::Line)
                .count();
            ensure(n == 1, || format!("line {} needs exactly one dc edge, found {n}", b.label))?;
        }
    }
    for e in &dc_edges {
        if let DcRole::Winding(role) = e.role {
            let owner = branches[e.branch].transformer.as_ref();
            ensure(owner.is_some_and(|t| t.winding_edges.get(&role) == dc_ix.get(&e.label)), || {
                format!("dc edge {} is not referenced by its transformer's winding_edges", e.label)
            })?;
        }
    }

    let transformers = branches
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BranchKind::Transformer)
        .map(|(i, _)| i)
        .collect();

    let net = AcNetwork { config, buses, generators, branches, substations, dc_edges, transformers };
    // Derivation errors (disconnected DC graph) surface at load time too.
    super::derive_dc_network(&net)?;
    Ok(net)
}
