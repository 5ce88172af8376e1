//! Rectangular AC-OPF with GIC reactive losses, and the placement objective F(z).
//!
//! Variables per bus: `vr, vi`, four shed slacks, `dqloss`; per generator `fp,
//! fq`; per branch the four directional flows; per transformer the effective
//! GIC copy `i_eff` and, in [`Coupling::Free`] only, the split `s_plus,
//! s_minus`. `w_i = vr_i^2 + vi_i^2` is always substituted, never a variable.
//!
//! Branch flows (`wc = vr_i vr_j + vi_i vi_j`, `ws = vr_j vi_i - vr_i vi_j`):
//!
//! ```text
//! p_fr =  g w_i - g wc - b ws        q_fr = -(b + bc/2) w_i + b wc - g ws
//! p_to =  g w_j - g wc + b ws        q_to = -(b + bc/2) w_j + b wc + g ws
//! ```
//!
//! The GIC reactive loss of a transformer, `k_loss sqrt(w) i_eff`, is charged
//! to its high-side (`from_bus`) bus.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use crate::gic::{effective_gic_at, EffectiveGic, FloatingPolicy};
use crate::netmodel::{materialize_xi, AcNetwork, DcNetwork, GmdScenario};
use crate::nlpsolve::{self, Constraint, NlpOptions, NlpProblem, NlpSolution, SolveStatus};
use crate::placement::Placement;

/// Weight of `s_plus + s_minus` added to the objective in free mode, $/A.
/// At any complementary point it contributes the constant `FREE_SPLIT_WEIGHT |theta|`;
/// it only removes the flat direction along `s_plus = s_minus`. At 1e-3 a zero
/// `theta` left both halves near 7e-4 A, inside the stationarity tolerance.
pub const FREE_SPLIT_WEIGHT: f64 = 1.0;

/// How the effective GIC enters the AC problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Coupling {
    /// `i_eff` pinned to the given values (amperes), e.g. from a GIC solve.
    Fixed { i_eff: Vec<f64> },
    /// Third ADMM block: `i_eff` free in `[0, limit]`, objective gains
    /// `-<mu, i_eff / i_base> + rho/2 ||(i_dc - i_eff) / i_base||^2`, the
    /// consensus measured in per-unit of `i_base` (amperes, one per transformer).
    AdmmPenalized { mu: Vec<f64>, rho: f64, i_dc: Vec<f64>, i_base: Vec<f64> },
    /// Signed `theta` given; `i_eff = |theta|` through the smooth
    /// complementarity split `s_plus - s_minus = theta`, `i_eff = s_plus + s_minus`,
    /// `s_plus s_minus = 0`.
    Free { theta: Vec<f64> },
}

impl Coupling {
    fn check(&self, nt: usize) -> Result<()> {
        let (what, lens): (&str, Vec<usize>) = match self {
            Coupling::Fixed { i_eff } => ("fixed i_eff", vec![i_eff.len()]),
            Coupling::AdmmPenalized { mu, i_dc, i_base, .. } => {
                ("admm mu/i_dc/i_base", vec![mu.len(), i_dc.len(), i_base.len()])
            }
            Coupling::Free { theta } => ("free theta", vec![theta.len()]),
        };
        if lens.iter().any(|&l| l != nt) {
            return Err(GicError::Coupling(format!("{what} needs {nt} entries, one per transformer")));
        }
        let values: Vec<f64> = match self {
            Coupling::Fixed { i_eff } => i_eff.clone(),
            Coupling::AdmmPenalized { mu, rho, i_dc, i_base } => {
                if !(rho.is_finite() && *rho >= 0.0) {
                    return Err(GicError::Coupling(format!("rho must be finite and >= 0, got {rho}")));
                }
                if i_base.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
                    return Err(GicError::Coupling("current base must be positive".into()));
                }
                mu.iter().chain(i_dc).copied().collect()
            }
            Coupling::Free { theta } => theta.clone(),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GicError::Coupling("non-finite coupling data".into()));
        }
        if let Coupling::Fixed { i_eff } = self {
            if i_eff.iter().any(|&v| v < 0.0) {
                return Err(GicError::Coupling("effective GIC must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn has_split(&self) -> bool {
        matches!(self, Coupling::Free { .. })
    }
}

/// Offsets of each variable block in the NLP vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcLayout {
    pub n_bus: usize,
    pub n_gen: usize,
    pub n_branch: usize,
    pub n_trafo: usize,
    pub vr: usize,
    pub vi: usize,
    pub fp: usize,
    pub fq: usize,
    pub p_fr: usize,
    pub p_to: usize,
    pub q_fr: usize,
    pub q_to: usize,
    pub lp_plus: usize,
    pub lp_minus: usize,
    pub lq_plus: usize,
    pub lq_minus: usize,
    pub dqloss: usize,
    pub i_eff: usize,
    /// Present only in free mode.
    pub s_plus: Option<usize>,
    pub s_minus: Option<usize>,
    pub n_vars: usize,
}

impl AcLayout {
    pub fn new(ac: &AcNetwork, split: bool) -> Self {
        let (nb, ng, nl, nt) = (ac.buses.len(), ac.generators.len(), ac.branches.len(), ac.n_transformers());
        let mut at = 0;
        let mut take = |k: usize| {
            let s = at;
            at += k;
            s
        };
        let vr = take(nb);
        let vi = take(nb);
        let fp = take(ng);
        let fq = take(ng);
        let p_fr = take(nl);
        let p_to = take(nl);
        let q_fr = take(nl);
        let q_to = take(nl);
        let lp_plus = take(nb);
        let lp_minus = take(nb);
        let lq_plus = take(nb);
        let lq_minus = take(nb);
        let dqloss = take(nb);
        let i_eff = take(nt);
        let (s_plus, s_minus) = if split { (Some(take(nt)), Some(take(nt))) } else { (None, None) };
        let n_vars = take(0);
        Self {
            n_bus: nb,
            n_gen: ng,
            n_branch: nl,
            n_trafo: nt,
            vr,
            vi,
            fp,
            fq,
            p_fr,
            p_to,
            q_fr,
            q_to,
            lp_plus,
            lp_minus,
            lq_plus,
            lq_minus,
            dqloss,
            i_eff,
            s_plus,
            s_minus,
            n_vars,
        }
    }
}

/// Decoded AC-OPF point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSolution {
    pub vr: Vec<f64>,
    pub vi: Vec<f64>,
    /// `vr^2 + vi^2` per bus.
    pub w: Vec<f64>,
    pub fp: Vec<f64>,
    pub fq: Vec<f64>,
    pub p_fr: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_fr: Vec<f64>,
    pub q_to: Vec<f64>,
    pub shed_p_plus: Vec<f64>,
    pub shed_p_minus: Vec<f64>,
    pub shed_q_plus: Vec<f64>,
    pub shed_q_minus: Vec<f64>,
    pub dqloss: Vec<f64>,
    pub i_eff: Vec<f64>,
    pub s_plus: Vec<f64>,
    pub s_minus: Vec<f64>,
}

impl AcSolution {
    pub fn decode(l: &AcLayout, x: &[f64]) -> Self {
        let sl = |o: usize, k: usize| x[o..o + k].to_vec();
        let vr = sl(l.vr, l.n_bus);
        let vi = sl(l.vi, l.n_bus);
        let w = vr.iter().zip(&vi).map(|(a, b)| a * a + b * b).collect();
        Self {
            w,
            vr,
            vi,
            fp: sl(l.fp, l.n_gen),
            fq: sl(l.fq, l.n_gen),
            p_fr: sl(l.p_fr, l.n_branch),
            p_to: sl(l.p_to, l.n_branch),
            q_fr: sl(l.q_fr, l.n_branch),
            q_to: sl(l.q_to, l.n_branch),
            shed_p_plus: sl(l.lp_plus, l.n_bus),
            shed_p_minus: sl(l.lp_minus, l.n_bus),
            shed_q_plus: sl(l.lq_plus, l.n_bus),
            shed_q_minus: sl(l.lq_minus, l.n_bus),
            dqloss: sl(l.dqloss, l.n_bus),
            i_eff: sl(l.i_eff, l.n_trafo),
            s_plus: l.s_plus.map_or_else(Vec::new, |o| sl(o, l.n_trafo)),
            s_minus: l.s_minus.map_or_else(Vec::new, |o| sl(o, l.n_trafo)),
        }
    }

    pub fn gen_cost(&self, ac: &AcNetwork) -> f64 {
        ac.generators.iter().zip(&self.fp).map(|(g, &p)| g.c1 * p + g.c2 * p * p).sum()
    }

    pub fn shed_total(&self) -> f64 {
        [&self.shed_p_plus, &self.shed_p_minus, &self.shed_q_plus, &self.shed_q_minus]
            .iter()
            .flat_map(|v| v.iter())
            .sum()
    }
}

/// `a_wi w_i + a_wj w_j + a_wc wc + a_ws ws` with its gradient over
/// `(vr_i, vi_i, vr_j, vi_j)`.
#[derive(Clone, Copy)]
struct VoltageForm {
    a_wi: f64,
    a_wj: f64,
    a_wc: f64,
    a_ws: f64,
}

impl VoltageForm {
    fn eval(&self, v: [f64; 4], g: &mut [f64]) -> f64 {
        let [ri, ii, rj, ij] = v;
        let wi = ri * ri + ii * ii;
        let wj = rj * rj + ij * ij;
        let wc = ri * rj + ii * ij;
        let ws = rj * ii - ri * ij;
        g[0] = self.a_wi * 2.0 * ri + self.a_wc * rj - self.a_ws * ij;
        g[1] = self.a_wi * 2.0 * ii + self.a_wc * ij + self.a_ws * rj;
        g[2] = self.a_wj * 2.0 * rj + self.a_wc * ri + self.a_ws * ii;
        g[3] = self.a_wj * 2.0 * ij + self.a_wc * ii - self.a_ws * ri;
        self.a_wi * wi + self.a_wj * wj + self.a_wc * wc + self.a_ws * ws
    }
}

/// Row and variable counts of a built problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub n_complementarity: usize,
}

impl Census {
    pub fn of(p: &NlpProblem) -> Self {
        Self {
            n_vars: p.n_vars,
            n_eq: p.eq_constraints.len(),
            n_ineq: p.ineq_constraints.len(),
            n_complementarity: p.complementarity_pairs.len(),
        }
    }
}

/// Builds the AC-OPF NLP for the given coupling mode.
pub fn build_acopf<'a>(ac: &'a AcNetwork, coupling: &Coupling) -> Result<(NlpProblem<'a>, AcLayout)> {
    let nt = ac.n_transformers();
    coupling.check(nt)?;
    let l = AcLayout::new(ac, coupling.has_split());
    let n = l.n_vars;
    let mut lo = vec![0.0; n];
    let mut hi = vec![f64::INFINITY; n];

    for (i, b) in ac.buses.iter().enumerate() {
        lo[l.vr + i] = b.vr_min;
        hi[l.vr + i] = b.vr_max;
        lo[l.vi + i] = b.vi_min;
        hi[l.vi + i] = b.vi_max;
    }
    for (k, g) in ac.generators.iter().enumerate() {
        lo[l.fp + k] = g.p_min;
        hi[l.fp + k] = g.p_max;
        lo[l.fq + k] = g.q_min;
        hi[l.fq + k] = g.q_max;
    }
    for (e, br) in ac.branches.iter().enumerate() {
        for off in [l.p_fr, l.p_to, l.q_fr, l.q_to] {
            lo[off + e] = -br.s_max;
            hi[off + e] = br.s_max;
        }
    }
    // Buses without a transformer on their high side carry no GIC loss.
    let mut loss_at: Vec<Vec<usize>> = vec![Vec::new(); l.n_bus];
    for (t, &b) in ac.transformers.iter().enumerate() {
        loss_at[ac.branches[b].from_bus].push(t);
    }
    for i in 0..l.n_bus {
        if loss_at[i].is_empty() {
            hi[l.dqloss + i] = 0.0;
        }
    }
    for (t, spec) in ac.transformer_specs().enumerate() {
        match coupling {
            Coupling::Fixed { i_eff } => {
                lo[l.i_eff + t] = i_eff[t];
                hi[l.i_eff + t] = i_eff[t];
            }
            _ => hi[l.i_eff + t] = spec.i_eff_max,
        }
        if let (Some(sp), Some(sm)) = (l.s_plus, l.s_minus) {
            hi[sp + t] = spec.i_eff_max;
            hi[sm + t] = spec.i_eff_max;
        }
    }

    let kappa = ac.config.kappa;
    let gens: Vec<(f64, f64)> = ac.generators.iter().map(|g| (g.c1, g.c2)).collect();
    let lay = l.clone();
    let coupling_obj = coupling.clone();
    let objective = move |x: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut f = 0.0;
        for (k, &(c1, c2)) in gens.iter().enumerate() {
            let p = x[lay.fp + k];
            f += c1 * p + c2 * p * p;
            g[lay.fp + k] = c1 + 2.0 * c2 * p;
        }
        for off in [lay.lp_plus, lay.lp_minus, lay.lq_plus, lay.lq_minus] {
            for i in 0..lay.n_bus {
                f += kappa * x[off + i];
                g[off + i] = kappa;
            }
        }
        match &coupling_obj {
            Coupling::Fixed { .. } => {}
            Coupling::AdmmPenalized { mu, rho, i_dc, i_base } => {
                for t in 0..lay.n_trafo {
                    let i = x[lay.i_eff + t];
                    let r = (i_dc[t] - i) / i_base[t];
                    f += -mu[t] * i / i_base[t] + 0.5 * rho * r * r;
                    g[lay.i_eff + t] = (-mu[t] - rho * r) / i_base[t];
                }
            }
            Coupling::Free { .. } => {
                let (sp, sm) = (lay.s_plus.unwrap(), lay.s_minus.unwrap());
                for t in 0..lay.n_trafo {
                    f += FREE_SPLIT_WEIGHT * (x[sp + t] + x[sm + t]);
                    g[sp + t] = FREE_SPLIT_WEIGHT;
                    g[sm + t] = FREE_SPLIT_WEIGHT;
                }
            }
        }
        f
    };

    let mut p = NlpProblem::new(lo, hi, objective);

    // Branch flow definitions, angle-difference and thermal limits.
    for (e, br) in ac.branches.iter().enumerate() {
        let (i, j) = (br.from_bus, br.to_bus);
        let vv = [l.vr + i, l.vi + i, l.vr + j, l.vi + j];
        let (g, b, bc) = (br.g, br.b, br.b_charge);
        let forms = [
            ("p_fr", l.p_fr, VoltageForm { a_wi: g, a_wj: 0.0, a_wc: -g, a_ws: -b }),
            ("p_to", l.p_to, VoltageForm { a_wi: 0.0, a_wj: g, a_wc: -g, a_ws: b }),
            ("q_fr", l.q_fr, VoltageForm { a_wi: -(b + bc / 2.0), a_wj: 0.0, a_wc: b, a_ws: -g }),
            ("q_to", l.q_to, VoltageForm { a_wi: 0.0, a_wj: -(b + bc / 2.0), a_wc: b, a_ws: g }),
        ];
        for (name, off, form) in forms {
            let flow = off + e;
            p.eq_constraints.push(Constraint::new(
                format!("{name}[branch {}]", br.label),
                vec![flow, vv[0], vv[1], vv[2], vv[3]],
                move |x, gr| {
                    let mut gv = [0.0; 4];
                    let val = form.eval([x[vv[0]], x[vv[1]], x[vv[2]], x[vv[3]]], &mut gv);
                    gr[0] = 1.0;
                    for k in 0..4 {
                        gr[k + 1] = -gv[k];
                    }
                    x[flow] - val
                },
            ));
        }
        let (tmax, tmin) = (br.theta_max.tan(), br.theta_min.tan());
        for (name, form) in [
            ("angle_max", VoltageForm { a_wi: 0.0, a_wj: 0.0, a_wc: -tmax, a_ws: 1.0 }),
            ("angle_min", VoltageForm { a_wi: 0.0, a_wj: 0.0, a_wc: tmin, a_ws: -1.0 }),
        ] {
            p.ineq_constraints.push(Constraint::new(
                format!("{name}[branch {}]", br.label),
                vv.to_vec(),
                move |x, gr| form.eval([x[vv[0]], x[vv[1]], x[vv[2]], x[vv[3]]], gr),
            ));
        }
        let s2 = br.s_max * br.s_max;
        for (name, pv, qv) in [("thermal_fr", l.p_fr + e, l.q_fr + e), ("thermal_to", l.p_to + e, l.q_to + e)] {
            p.ineq_constraints.push(Constraint::new(
                format!("{name}[branch {}]", br.label),
                vec![pv, qv],
                move |x, gr| {
                    gr[0] = 2.0 * x[pv];
                    gr[1] = 2.0 * x[qv];
                    x[pv] * x[pv] + x[qv] * x[qv] - s2
                },
            ));
        }
    }

    // Nodal balance.
    for (i, bus) in ac.buses.iter().enumerate() {
        let mut p_vars = Vec::new();
        let mut q_vars = Vec::new();
        for (e, br) in ac.branches.iter().enumerate() {
            if br.from_bus == i {
                p_vars.push(l.p_fr + e);
                q_vars.push(l.q_fr + e);
            }
            if br.to_bus == i {
                p_vars.push(l.p_to + e);
                q_vars.push(l.q_to + e);
            }
        }
        let n_flow = p_vars.len();
        let mut n_gen = 0;
        for (k, gen) in ac.generators.iter().enumerate() {
            if gen.bus == i {
                p_vars.push(l.fp + k);
                q_vars.push(l.fq + k);
                n_gen += 1;
            }
        }
        let (vr, vi) = (l.vr + i, l.vi + i);
        p_vars.extend([l.lp_plus + i, l.lp_minus + i, vr, vi]);
        q_vars.extend([l.lq_plus + i, l.lq_minus + i, vr, vi, l.dqloss + i]);

        let (pd, gs) = (bus.p_demand, bus.g_shunt);
        let pv = p_vars.clone();
        p.eq_constraints.push(Constraint::new(format!("balance_p[bus {}]", bus.label), p_vars, move |x, gr| {
            let mut s = pd;
            for k in 0..n_flow {
                s += x[pv[k]];
                gr[k] = 1.0;
            }
            for k in n_flow..n_flow + n_gen {
                s -= x[pv[k]];
                gr[k] = -1.0;
            }
            let m = n_flow + n_gen;
            s += -x[pv[m]] + x[pv[m + 1]];
            gr[m] = -1.0;
            gr[m + 1] = 1.0;
            let (r, im) = (x[vr], x[vi]);
            s += gs * (r * r + im * im);
            gr[m + 2] = 2.0 * gs * r;
            gr[m + 3] = 2.0 * gs * im;
            s
        }));
        let (qd, bs) = (bus.q_demand, bus.b_shunt);
        let qv = q_vars.clone();
        p.eq_constraints.push(Constraint::new(format!("balance_q[bus {}]", bus.label), q_vars, move |x, gr| {
            let mut s = qd;
            for k in 0..n_flow {
                s += x[qv[k]];
                gr[k] = 1.0;
            }
            for k in n_flow..n_flow + n_gen {
                s -= x[qv[k]];
                gr[k] = -1.0;
            }
            let m = n_flow + n_gen;
            s += -x[qv[m]] + x[qv[m + 1]];
            gr[m] = -1.0;
            gr[m + 1] = 1.0;
            let (r, im) = (x[vr], x[vi]);
            s -= bs * (r * r + im * im);
            gr[m + 2] = -2.0 * bs * r;
            gr[m + 3] = -2.0 * bs * im;
            s += x[qv[m + 4]];
            gr[m + 4] = 1.0;
            s
        }));
    }

    // GIC reactive loss at each bus that is the high side of a transformer.
    for (i, ts) in loss_at.iter().enumerate() {
        if ts.is_empty() {
            continue;
        }
        let k: Vec<f64> = ts.iter().map(|&t| ac.transformer(t).k_loss).collect();
        let mut vars = vec![l.dqloss + i, l.vr + i, l.vi + i];
        vars.extend(ts.iter().map(|&t| l.i_eff + t));
        let idx = vars.clone();
        p.eq_constraints.push(Constraint::new(format!("qloss[bus {}]", ac.buses[i].label), vars, move |x, gr| {
            let (r, im) = (x[idx[1]], x[idx[2]]);
            let vm = (r * r + im * im).sqrt();
            let load: f64 = k.iter().enumerate().map(|(a, kk)| kk * x[idx[3 + a]]).sum();
            gr[0] = 1.0;
            gr[1] = -r / vm * load;
            gr[2] = -im / vm * load;
            for (a, kk) in k.iter().enumerate() {
                gr[3 + a] = -kk * vm;
            }
            x[idx[0]] - vm * load
        }));
    }

    if let Coupling::Free { theta } = coupling {
        let (sp, sm) = (l.s_plus.unwrap(), l.s_minus.unwrap());
        for t in 0..nt {
            let label = ac.branches[ac.transformers[t]].label;
            p.eq_constraints.push(Constraint::linear(
                format!("theta_split[transformer {label}]"),
                vec![sp + t, sm + t],
                vec![1.0, -1.0],
                -theta[t],
            ));
            p.eq_constraints.push(Constraint::linear(
                format!("i_eff_split[transformer {label}]"),
                vec![l.i_eff + t, sp + t, sm + t],
                vec![1.0, -1.0, -1.0],
                0.0,
            ));
            p.complementarity_pairs.push((sp + t, sm + t));
        }
    }

    // Amperes are two orders above pu quantities.
    let mut scale = vec![1.0; n];
    for t in 0..nt {
        let s = (ac.transformer(t).i_eff_max / 10.0).clamp(1.0, 100.0);
        scale[l.i_eff + t] = s;
        if let (Some(sp), Some(sm)) = (l.s_plus, l.s_minus) {
            scale[sp + t] = s;
            scale[sm + t] = s;
        }
    }
    p.var_scale = Some(scale);
    p.objective_separable = true;
    Ok((p, l))
}

/// Flat start: `vr = 1`, `vi = 0` (clamped to bounds), generation at mid-range,
/// zero shedding; flows, losses and the GIC split are made consistent with it.
pub fn flat_start(ac: &AcNetwork, layout: &AcLayout, p: &NlpProblem, coupling: &Coupling) -> Vec<f64> {
    let l = layout;
    let mut x = vec![0.0; l.n_vars];
    for i in 0..l.n_bus {
        x[l.vr + i] = 1.0f64.clamp(p.lower[l.vr + i], p.upper[l.vr + i]);
        x[l.vi + i] = 0.0f64.clamp(p.lower[l.vi + i], p.upper[l.vi + i]);
    }
    for k in 0..l.n_gen {
        x[l.fp + k] = 0.5 * (p.lower[l.fp + k] + p.upper[l.fp + k]);
        x[l.fq + k] = 0.5 * (p.lower[l.fq + k] + p.upper[l.fq + k]);
    }
    match coupling {
        Coupling::Fixed { i_eff } => x[l.i_eff..l.i_eff + l.n_trafo].copy_from_slice(i_eff),
        Coupling::AdmmPenalized { i_dc, .. } => {
            for t in 0..l.n_trafo {
                x[l.i_eff + t] = i_dc[t].clamp(p.lower[l.i_eff + t], p.upper[l.i_eff + t]);
            }
        }
        Coupling::Free { theta } => {
            let (sp, sm) = (l.s_plus.unwrap(), l.s_minus.unwrap());
            for t in 0..l.n_trafo {
                x[sp + t] = theta[t].max(0.0).min(p.upper[sp + t]);
                x[sm + t] = (-theta[t]).max(0.0).min(p.upper[sm + t]);
                x[l.i_eff + t] = (x[sp + t] + x[sm + t]).min(p.upper[l.i_eff + t]);
            }
        }
    }
    complete_dependent(ac, l, &mut x);
    x
}

/// Recomputes flows and GIC losses from voltages and `i_eff`.
fn complete_dependent(ac: &AcNetwork, l: &AcLayout, x: &mut [f64]) {
    for (e, br) in ac.branches.iter().enumerate() {
        let (i, j) = (br.from_bus, br.to_bus);
        let (ri, ii, rj, ij) = (x[l.vr + i], x[l.vi + i], x[l.vr + j], x[l.vi + j]);
        let (wi, wj) = (ri * ri + ii * ii, rj * rj + ij * ij);
        let wc = ri * rj + ii * ij;
        let ws = rj * ii - ri * ij;
        let (g, b, bc) = (br.g, br.b, br.b_charge);
        let cap = |v: f64| v.clamp(-br.s_max, br.s_max);
        x[l.p_fr + e] = cap(g * wi - g * wc - b * ws);
        x[l.p_to + e] = cap(g * wj - g * wc + b * ws);
        x[l.q_fr + e] = cap(-(b + bc / 2.0) * wi + b * wc - g * ws);
        x[l.q_to + e] = cap(-(b + bc / 2.0) * wj + b * wc + g * ws);
    }
    for i in 0..l.n_bus {
        x[l.dqloss + i] = 0.0;
    }
    for (t, &b) in ac.transformers.iter().enumerate() {
        let i = ac.branches[b].from_bus;
        let vm = (x[l.vr + i].powi(2) + x[l.vi + i].powi(2)).sqrt();
        x[l.dqloss + i] += ac.transformer(t).k_loss * vm * x[l.i_eff + t];
    }
}

/// Result of one AC-OPF solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcOpfResult {
    pub nlp: NlpSolution,
    pub solution: AcSolution,
    pub layout: AcLayout,
    /// Largest nodal balance mismatch, pu.
    pub max_balance_residual: f64,
}

/// Builds and solves the AC-OPF. Starts from `x0` when given (warm start),
/// otherwise from the flat start with up to `restarts` perturbed retries.
pub fn solve_acopf(
    ac: &AcNetwork,
    coupling: &Coupling,
    x0: Option<&[f64]>,
    nlp: &NlpOptions,
    restarts: usize,
) -> Result<AcOpfResult> {
    let (p, layout) = build_acopf(ac, coupling)?;
    let start = match x0 {
        Some(x) if x.len() == layout.n_vars => x.to_vec(),
        Some(x) => {
            return Err(GicError::validation(format!(
                "warm start has {} entries, problem has {}",
                x.len(),
                layout.n_vars
            )))
        }
        None => flat_start(ac, &layout, &p, coupling),
    };
    let mut best = nlpsolve::solve(&p, &start, nlp)?;
    for r in 0..restarts {
        if best.status == SolveStatus::OptimalTolerance {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + r as u64);
        let mut x = start.clone();
        for i in 0..layout.n_bus {
            x[layout.vr + i] += 1e-2 * rng.random_range(-1.0..1.0);
            x[layout.vi + i] += 1e-2 * rng.random_range(-1.0..1.0);
        }
        for i in 0..layout.n_vars {
            x[i] = x[i].clamp(p.lower[i], p.upper[i]);
        }
        complete_dependent(ac, &layout, &mut x);
        let cand = nlpsolve::solve(&p, &x, nlp)?;
        if better(&cand, &best, nlp.tol) {
            best = cand;
        }
    }
    let solution = AcSolution::decode(&layout, &best.x);
    let max_balance_residual = balance_residual(&p, &best.x);
    Ok(AcOpfResult { nlp: best, solution, layout, max_balance_residual })
}

fn better(a: &NlpSolution, b: &NlpSolution, tol: f64) -> bool {
    let rank = |s: &NlpSolution| match s.status {
        SolveStatus::OptimalTolerance => 0,
        _ if s.max_residual <= tol => 1,
        _ => 2,
    };
    match rank(a).cmp(&rank(b)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal if rank(a) == 2 => a.max_residual < b.max_residual,
        std::cmp::Ordering::Equal => a.objective < b.objective,
    }
}

fn balance_residual(p: &NlpProblem, x: &[f64]) -> f64 {
    let mut buf = Vec::new();
    p.eq_constraints
        .iter()
        .filter(|c| c.name.starts_with("balance_"))
        .map(|c| {
            buf.resize(c.vars.len(), 0.0);
            (c.eval)(x, &mut buf).abs()
        })
        .fold(0.0, f64::max)
}

/// Options for [`evaluate_placement`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub nlp: NlpOptions,
    /// Perturbed flat-start retries after a non-converged solve.
    pub restarts: usize,
    /// Handling of a DC component left without any unblocked ground. Pinning a
    /// reference node is the default here so that placements blocking every
    /// substation can still be scored; edge currents do not depend on it.
    pub floating: FloatingPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { nlp: NlpOptions::default(), restarts: 3, floating: FloatingPolicy::PinReference }
    }
}

impl EvalOptions {
    /// Defaults with the tolerances and caps from the network's config block.
    pub fn for_network(ac: &AcNetwork) -> Self {
        let mut o = Self::default();
        o.nlp.tol = ac.config.nlp_tol;
        o.nlp.opt_tol = ac.config.nlp_tol;
        o.nlp.max_outer = ac.config.nlp_max_outer;
        o.nlp.max_inner = ac.config.nlp_max_inner;
        o
    }
}

/// F(z) and its breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub placement: Placement,
    /// `gen_cost + shed_penalty`, $. On non-convergence this is the value at
    /// the best iterate found (lowest residual, then objective).
    pub objective: f64,
    pub gen_cost: f64,
    pub shed_penalty: f64,
    pub max_balance_residual: f64,
    pub solver_status: SolveStatus,
    pub max_residual: f64,
    pub iterations: usize,
    /// Effective GIC per transformer, amperes.
    pub i_eff: Vec<f64>,
    /// Transformers above their effective-GIC limit: (index, i_eff, limit).
    pub violations: Vec<(usize, f64, f64)>,
}

/// F(z): GIC solve, effective GIC, fixed-coupling AC-OPF.
pub fn evaluate_placement(
    ac: &AcNetwork,
    dc: &DcNetwork,
    scenario: &GmdScenario,
    z: &Placement,
    budget: usize,
    opts: &EvalOptions,
) -> Result<EvaluationReport> {
    let xi = materialize_xi(dc, scenario)?;
    evaluate_with_xi(ac, dc, &xi, z, budget, opts)
}

/// [`evaluate_placement`] with the induced sources already materialized.
pub fn evaluate_with_xi(
    ac: &AcNetwork,
    dc: &DcNetwork,
    xi: &[f64],
    z: &Placement,
    budget: usize,
    opts: &EvalOptions,
) -> Result<EvaluationReport> {
    z.check(ac.n_substations(), budget)?;
    let (_, eff) = effective_gic_at(ac, dc, xi, &z.as_f64(), opts.floating)?;
    let res = solve_acopf(ac, &Coupling::Fixed { i_eff: eff.i_eff.clone() }, None, &opts.nlp, opts.restarts)?;
    Ok(report_from(ac, z, &eff, &res))
}

fn report_from(ac: &AcNetwork, z: &Placement, eff: &EffectiveGic, res: &AcOpfResult) -> EvaluationReport {
    let gen_cost = res.solution.gen_cost(ac);
    let shed_penalty = ac.config.kappa * res.solution.shed_total();
    EvaluationReport {
        placement: z.clone(),
        objective: gen_cost + shed_penalty,
        gen_cost,
        shed_penalty,
        max_balance_residual: res.max_balance_residual,
        solver_status: res.nlp.status,
        max_residual: res.nlp.max_residual,
        iterations: res.nlp.iterations,
        i_eff: eff.i_eff.clone(),
        violations: eff.limit_violations(ac),
    }
}

/// Memoizing F(z) evaluator over one network and scenario. Safe to share
/// across threads; repeated placements are served from the cache.
#[derive(Debug)]
pub struct Evaluator<'a> {
    pub ac: &'a AcNetwork,
    pub dc: &'a DcNetwork,
    pub xi: Vec<f64>,
    pub budget: usize,
    pub opts: EvalOptions,
    cache: Mutex<HashMap<Placement, EvaluationReport>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        ac: &'a AcNetwork,
        dc: &'a DcNetwork,
        scenario: &GmdScenario,
        budget: usize,
        opts: EvalOptions,
    ) -> Result<Self> {
        let xi = materialize_xi(dc, scenario)?;
        Ok(Self { ac, dc, xi, budget, opts, cache: Mutex::new(HashMap::new()) })
    }

    pub fn evaluate(&self, z: &Placement) -> Result<EvaluationReport> {
        if let Some(r) = self.cache.lock().expect("cache lock").get(z) {
            return Ok(r.clone());
        }
        let r = evaluate_with_xi(self.ac, self.dc, &self.xi, z, self.budget, &self.opts)?;
        self.cache.lock().expect("cache lock").insert(z.clone(), r.clone());
        Ok(r)
    }

    /// Number of distinct placements evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::netmodel::derive_dc_network;

    #[test]
    fn case5_census_is_stable() {
        // 5 buses, 2 generators, 5 branches, 2 transformers:
        // vars 2*5 + 2*2 + 4*5 + 4*5 (sheds) + 5 (dqloss) + 2 (i_eff) = 61;
        // eq rows 4*5 flows + 2*5 balance + 2 qloss = 32;
        // ineq rows 2*5 angle + 2*5 thermal = 20.
        let ac = bundled::case5();
        let (p, _) = build_acopf(&ac, &Coupling::Fixed { i_eff: vec![120.0, 80.0] }).unwrap();
        assert_eq!(Census::of(&p), Census { n_vars: 61, n_eq: 32, n_ineq: 20, n_complementarity: 0 });
        let (p, _) = build_acopf(&ac, &Coupling::Free { theta: vec![1.0, -2.0] }).unwrap();
        assert_eq!(Census::of(&p), Census { n_vars: 65, n_eq: 36, n_ineq: 20, n_complementarity: 2 });
    }

    #[test]
    fn wrong_coupling_length_is_rejected() {
        let ac = bundled::case5();
        assert!(matches!(build_acopf(&ac, &Coupling::Fixed { i_eff: vec![1.0] }), Err(GicError::Coupling(_))));
    }

    #[test]
    fn gradients_match_finite_differences_at_flat_start() {
        for ac in [bundled::case5(), bundled::case12()] {
            let nt = ac.n_transformers();
            for c in [
                Coupling::Fixed { i_eff: vec![50.0; nt] },
                Coupling::AdmmPenalized { mu: vec![0.3; nt], rho: 2.0, i_dc: vec![40.0; nt], i_base: vec![500.0; nt] },
                Coupling::Free { theta: (0..nt).map(|t| t as f64 - 1.5).collect() },
            ] {
                let (p, l) = build_acopf(&ac, &c).unwrap();
                let x = flat_start(&ac, &l, &p, &c);
                let err = nlpsolve::check_gradients(&p, &x);
                assert!(err <= 1e-5, "{err}");
            }
        }
    }

    #[test]
    fn zero_gic_solves_plain_opf() {
        let ac = bundled::case5();
        let res = solve_acopf(&ac, &Coupling::Fixed { i_eff: vec![0.0; 2] }, None, &NlpOptions::default(), 3).unwrap();
        assert_eq!(res.nlp.status, SolveStatus::OptimalTolerance, "{:?}", res.nlp);
        assert!(res.nlp.max_residual <= 1e-6);
        assert!(res.solution.dqloss.iter().all(|&d| d == 0.0));
        assert!(res.solution.shed_total() < 1e-6);
        let w = &res.solution.w;
        for i in 0..w.len() {
            assert_eq!(w[i], res.solution.vr[i] * res.solution.vr[i] + res.solution.vi[i] * res.solution.vi[i]);
        }
    }

    #[test]
    fn zero_penalty_admm_matches_fixed_objective() {
        let ac = bundled::case5();
        let fixed = Coupling::Fixed { i_eff: vec![0.0; 2] };
        let admm = Coupling::AdmmPenalized { mu: vec![0.0; 2], rho: 0.0, i_dc: vec![0.0; 2], i_base: vec![1.0; 2] };
        let (pf, lf) = build_acopf(&ac, &fixed).unwrap();
        let (pa, _) = build_acopf(&ac, &admm).unwrap();
        let x = flat_start(&ac, &lf, &pf, &fixed);
        assert_eq!(pf.objective_value(&x), pa.objective_value(&x));
    }

    #[test]
    fn zero_field_makes_placement_irrelevant() {
        let ac = bundled::case5();
        let dc = derive_dc_network(&ac).unwrap();
        let s = GmdScenario::field(0.0, 45.0);
        let o = EvalOptions::default();
        let a = evaluate_placement(&ac, &dc, &s, &Placement(vec![0, 0, 0]), 3, &o).unwrap();
        let b = evaluate_placement(&ac, &dc, &s, &Placement(vec![1, 0, 1]), 3, &o).unwrap();
        assert_eq!(a.objective, b.objective);
        assert!((a.objective - (a.gen_cost + a.shed_penalty)).abs() <= 1e-8 * a.objective.abs());
    }

    #[test]
    fn over_budget_placement_is_rejected() {
        let ac = bundled::case5();
        let dc = derive_dc_network(&ac).unwrap();
        let r = evaluate_placement(&ac, &dc, &GmdScenario::field(10.0, 45.0), &Placement(vec![1, 1, 0]), 1, &EvalOptions::default());
        assert!(matches!(r, Err(GicError::BudgetExceeded { .. })));
    }
}
