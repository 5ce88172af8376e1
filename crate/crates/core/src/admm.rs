//! Three-block ADMM with a binary first block (3ADMM-B).
//!
//! Consensus pairs: the binary placement `z_b` with its relaxed copy `z`, and
//! the AC copy of effective GIC `i_ac` with the DC copy `i_dc`. One iteration:
//!
//! 1. `z_b` from the closed-form knapsack on the relaxed `z`;
//! 2. `(z, i_dc)` from the relaxed DC circuit NLP;
//! 3. `i_ac` from the AC-OPF with the consensus penalty on `i_eff`;
//! 4. `lambda += rho (z_b - z)`, `mu += rho (i_dc - i_ac) / i_base`.
//!
//! Currents are stored in amperes but enter the consensus terms, the duals and
//! the residuals in per-unit of `i_base`, the per-transformer effective-GIC
//! limit, so that both consensus pairs are of order one.
//!
//! Duals are unscaled. Residuals are normalized:
//! `p = ||v - u|| / max(||u||, ||v||)` and `d = rho ||u - u_prev|| / ||w||` with
//! `u = (z, i_ac)`, `v = (z_b, i_dc)`, `w = (lambda, mu)`. A zero denominator
//! yields 0 when the numerator is 0 as well and +inf otherwise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::acopf::{solve_acopf, AcOpfResult, Coupling};
use crate::error::{GicError, Result};
use crate::gic::{effective_gic_at, solve_gic_with, theta_coefficients, FloatingPolicy};
use crate::netmodel::{materialize_xi, AcNetwork, DcNetwork, GmdScenario};
use crate::nlpsolve::{self, Constraint, NlpOptions, NlpProblem, SolveStatus};
use crate::placement::Placement;

/// Full iterate of the driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub t: usize,
    pub z: Vec<f64>,
    pub z_b: Placement,
    pub i_ac: Vec<f64>,
    pub i_dc: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub p_res: f64,
    pub d_res: f64,
    /// Per-unit base of the currents, amperes.
    pub i_base: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NrbOptions {
    pub enabled: bool,
    pub beta: f64,
    pub tau: f64,
}

impl Default for NrbOptions {
    fn default() -> Self {
        Self { enabled: true, beta: 2.0, tau: 10.0 }
    }
}

/// What the driver does when a subproblem does not reach optimal tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    Abort,
    /// Keep going with the best iterate the NLP solver returned.
    #[default]
    ContinueBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub rho0: f64,
    pub nrb: NrbOptions,
    /// Multiply `lambda` and `mu` by `rho_new / rho_old` whenever NRB changes rho.
    pub rescale_duals: bool,
    pub failure: FailurePolicy,
    pub nlp: NlpOptions,
    /// Restarts for the first (cold) AC solve.
    pub restarts: usize,
    pub lambda0: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub z0: Option<Vec<f64>>,
    pub i_ac0: Option<Vec<f64>>,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iters: 200,
            rho0: 1e2,
            nrb: NrbOptions::default(),
            rescale_duals: false,
            failure: FailurePolicy::default(),
            nlp: NlpOptions::default(),
            restarts: 3,
            lambda0: None,
            mu0: None,
            z0: None,
            i_ac0: None,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(GicError::validation("admm epsilon must be positive"));
        }
        if !(self.rho0 > 0.0) {
            return Err(GicError::validation("admm rho0 must be positive"));
        }
        if !(self.nrb.beta > 0.0) || !(self.nrb.tau > 1.0) {
            return Err(GicError::validation("nrb needs beta > 0 and tau > 1"));
        }
        Ok(())
    }
}

/// Exact minimizer of `<lambda, z_b> + rho/2 ||z_b - z_c||^2` over binary `z_b`
/// with at most `budget` ones.
///
/// With `z_b` binary the objective is `sum c_i z_b_i + const`, where
/// `c_i = rho/2 + lambda_i - rho z_c_i`; the best choice takes the most
/// negative coefficients first. Ties keep ascending index order.
pub fn knapsack_closed(rho: f64, lambda: &[f64], z_c: &[f64], budget: usize) -> Placement {
    assert_eq!(lambda.len(), z_c.len());
    let c: Vec<f64> = lambda.iter().zip(z_c).map(|(l, z)| rho / 2.0 + l - rho * z).collect();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
    let mut z_b = Placement::none(c.len());
    for &i in order.iter().take(budget) {
        if c[i] < 0.0 {
            z_b.0[i] = 1;
        }
    }
    z_b
}

/// `lambda += rho (z_b - z)`, `mu += rho (i_dc - i_ac) / i_base`, `t += 1`.
pub fn dual_update(state: &mut AdmmState) {
    for (l, (b, z)) in state.lambda.iter_mut().zip(state.z_b.0.iter().zip(&state.z)) {
        *l += state.rho * (*b as f64 - z);
    }
    for (t, m) in state.mu.iter_mut().enumerate() {
        *m += state.rho * (state.i_dc[t] - state.i_ac[t]) / state.i_base[t];
    }
    state.t += 1;
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `u = (z, i_ac / i_base)` flattened, the iterate the dual residual tracks.
pub fn primal_u(state: &AdmmState) -> Vec<f64> {
    let i = state.i_ac.iter().zip(&state.i_base).map(|(a, b)| a / b);
    state.z.iter().copied().chain(i).collect()
}

/// Normalized primal and dual residuals of `state` given the previous `u`.
pub fn residuals(state: &AdmmState, prev_u: &[f64]) -> (f64, f64) {
    let u = primal_u(state);
    let i_dc = state.i_dc.iter().zip(&state.i_base).map(|(a, b)| a / b);
    let v: Vec<f64> = state.z_b.0.iter().map(|&b| b as f64).chain(i_dc).collect();
    let nu = norm(u.iter().copied());
    let nv = norm(v.iter().copied());
    let p = ratio(norm(u.iter().zip(&v).map(|(a, b)| b - a)), nu.max(nv));
    let nw = norm(state.lambda.iter().chain(&state.mu).copied());
    let d = ratio(state.rho * norm(u.iter().zip(prev_u).map(|(a, b)| a - b)), nw);
    (p, d)
}

/// Normalized residual balancing: grow rho when the primal residual lags,
/// shrink it when the dual residual does, keep it on the boundary.
pub fn nrb_update(rho: f64, p_res: f64, d_res: f64, beta: f64, tau: f64) -> f64 {
    if p_res > beta * d_res {
        rho * tau
    } else if p_res < beta * d_res {
        rho / tau
    } else {
        rho
    }
}

/// Variable layout of the relaxed DC circuit problem.
#[derive(Debug, Clone, Copy)]
struct DcLayout {
    n_node: usize,
    n_sub: usize,
    n_trafo: usize,
}

impl DcLayout {
    fn vd(&self) -> usize {
        0
    }
    fn z(&self) -> usize {
        self.n_node
    }
    fn i_dc(&self) -> usize {
        self.n_node + self.n_sub
    }
    fn s_plus(&self) -> usize {
        self.i_dc() + self.n_trafo
    }
    fn s_minus(&self) -> usize {
        self.s_plus() + self.n_trafo
    }
    fn n_vars(&self) -> usize {
        self.s_minus() + self.n_trafo
    }
}

/// The relaxed DC circuit with its induced sources, reusable across iterations.
#[derive(Debug, Clone)]
pub struct DcBlock<'a> {
    ac: &'a AcNetwork,
    dc: &'a DcNetwork,
    xi: Vec<f64>,
    layout: DcLayout,
    /// Typical node voltage magnitude, volts.
    v_scale: f64,
    /// Last solution, the next warm start.
    pub warm: Option<Vec<f64>>,
}

/// Outcome of one second-block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondBlock {
    pub z: Vec<f64>,
    pub i_dc: Vec<f64>,
    pub vd: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
}

impl<'a> DcBlock<'a> {
    pub fn new(ac: &'a AcNetwork, dc: &'a DcNetwork, xi: Vec<f64>) -> Result<Self> {
        let layout = DcLayout { n_node: dc.n_nodes(), n_sub: dc.n_substations(), n_trafo: ac.n_transformers() };
        let sol = solve_gic_with(dc, &xi, &vec![0.0; layout.n_sub], FloatingPolicy::PinReference)?;
        let v_scale = sol.vd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(Self { ac, dc, xi, layout, v_scale, warm: None })
    }

    /// Minimizes `-<lambda, z> + <mu, i_dc> + rho/2 (||z_b - z||^2 + ||i_dc - i_ac||^2)`
    /// (currents in per-unit of `i_base`)
    /// over the circuit equations with `z` relaxed to `[0, 1]` and
    /// `i_dc = |theta|` through the complementarity split.
    pub fn solve(&mut self, state: &AdmmState, nlp: &NlpOptions) -> Result<SecondBlock> {
        let l = self.layout;
        let p = self.problem(state);
        let x0 = match &self.warm {
            Some(x) => x.clone(),
            None => self.start(&state.z)?,
        };
        let sol = nlpsolve::solve(&p, &x0, nlp)?;
        let x = sol.x.clone();
        self.warm = Some(x.clone());
        Ok(SecondBlock {
            z: x[l.z()..l.z() + l.n_sub].to_vec(),
            i_dc: x[l.i_dc()..l.i_dc() + l.n_trafo].to_vec(),
            vd: x[l.vd()..l.vd() + l.n_node].to_vec(),
            status: sol.status,
            objective: sol.objective,
        })
    }

    /// The second-block NLP at the given ADMM state.
    pub fn problem(&self, state: &AdmmState) -> NlpProblem<'static> {
        let l = self.layout;
        let (ac, dc) = (self.ac, self.dc);
        let n = l.n_vars();
        let (comp, _) = dc.components();

        let mut lo = vec![0.0; n];
        let mut hi = vec![f64::INFINITY; n];
        for m in 0..l.n_node {
            let free = comp[m].is_some();
            lo[l.vd() + m] = if free { f64::NEG_INFINITY } else { 0.0 };
            hi[l.vd() + m] = if free { f64::INFINITY } else { 0.0 };
        }
        for s in 0..l.n_sub {
            hi[l.z() + s] = 1.0;
        }
        for (t, spec) in ac.transformer_specs().enumerate() {
            hi[l.i_dc() + t] = spec.i_eff_max;
        }

        let lambda = state.lambda.clone();
        let mu = state.mu.clone();
        let rho = state.rho;
        let z_b = state.z_b.as_f64();
        let i_ac = state.i_ac.clone();
        let base = state.i_base.clone();
        let objective = move |x: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut f = 0.0;
            for s in 0..l.n_sub {
                let z = x[l.z() + s];
                f += -lambda[s] * z + rho / 2.0 * (z_b[s] - z).powi(2);
                g[l.z() + s] = -lambda[s] - rho * (z_b[s] - z);
            }
            for t in 0..l.n_trafo {
                let i = x[l.i_dc() + t] / base[t];
                let r = i - i_ac[t] / base[t];
                f += mu[t] * i + rho / 2.0 * r * r;
                g[l.i_dc() + t] = (mu[t] + rho * r) / base[t];
            }
            f
        };
        let mut p = NlpProblem::new(lo, hi, objective);
        p.objective_separable = true;

        // KCL: inflow - outflow - a (1 - z) v = 0, edge currents substituted.
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); l.n_node];
        for (k, e) in dc.edges.iter().enumerate() {
            incident[e.from].push(k);
            incident[e.to].push(k);
        }
        let sub_of: Vec<Option<usize>> = (0..l.n_node)
            .map(|m| dc.substation_nodes.iter().position(|&x| x == m))
            .collect();
        for m in 0..l.n_node {
            if comp[m].is_none() {
                continue;
            }
            let a = dc.nodes[m].a_ground;
            let mut vars = vec![l.vd() + m];
            let mut coef = vec![0.0];
            let mut constant = 0.0;
            for &k in &incident[m] {
                let e = &dc.edges[k];
                // I_e = gamma (v_from - v_to + xi); sign +1 into `to`, -1 out of `from`.
                let sign = if e.to == m { 1.0 } else { -1.0 };
                constant += sign * e.gamma * self.xi[k];
                for (node, c) in [(e.from, sign * e.gamma), (e.to, -sign * e.gamma)] {
                    match vars.iter().position(|&v| v == l.vd() + node) {
                        Some(pos) => coef[pos] += c,
                        None => {
                            vars.push(l.vd() + node);
                            coef.push(c);
                        }
                    }
                }
            }
            let name = format!("kcl[node {m}]");
            match sub_of[m] {
                Some(s) if a > 0.0 => {
                    let zi = l.z() + s;
                    let vi = l.vd() + m;
                    vars.push(zi);
                    let nv = coef.len();
                    let idx = vars.clone();
                    p.eq_constraints.push(Constraint::new(name, vars, move |x, g| {
                        let mut c = constant;
                        for k in 0..nv {
                            g[k] = coef[k];
                            c += coef[k] * x[idx[k]];
                        }
                        // - a (1 - z) v
                        c -= a * (1.0 - x[zi]) * x[vi];
                        g[0] -= a * (1.0 - x[zi]);
                        g[nv] = a * x[vi];
                        c
                    }));
                }
                _ => p.eq_constraints.push(Constraint::linear(name, vars, coef, constant)),
            }
        }

        // Split rows: s+ - s- = theta(vd), i_dc = s+ + s-.
        for (t, spec) in ac.transformer_specs().enumerate() {
            let mut vars = vec![l.s_plus() + t, l.s_minus() + t];
            let mut coef = vec![1.0, -1.0];
            let mut constant = 0.0;
            for (edge, w) in theta_coefficients(spec) {
                let e = &dc.edges[edge];
                constant -= w * e.gamma * self.xi[edge];
                for (node, c) in [(e.from, -w * e.gamma), (e.to, w * e.gamma)] {
                    match vars.iter().position(|&v| v == l.vd() + node) {
                        Some(pos) => coef[pos] += c,
                        None => {
                            vars.push(l.vd() + node);
                            coef.push(c);
                        }
                    }
                }
            }
            p.eq_constraints.push(Constraint::linear(format!("theta[trafo {t}]"), vars, coef, constant));
            p.eq_constraints.push(Constraint::linear(
                format!("i_dc[trafo {t}]"),
                vec![l.i_dc() + t, l.s_plus() + t, l.s_minus() + t],
                vec![1.0, -1.0, -1.0],
                0.0,
            ));
            p.complementarity_pairs.push((l.s_plus() + t, l.s_minus() + t));
        }

        let mut scale = vec![1.0; n];
        for m in 0..l.n_node {
            scale[l.vd() + m] = self.v_scale;
        }
        for t in 0..l.n_trafo {
            let s = (ac.transformer(t).i_eff_max / 10.0).clamp(1.0, 100.0);
            for base in [l.i_dc(), l.s_plus(), l.s_minus()] {
                scale[base + t] = s;
            }
        }
        p.var_scale = Some(scale);
        p
    }

    /// Circuit solution at the relaxed `z`, split consistent with it.
    /// Cold start: the circuit solution at the relaxed placement `z`.
    pub fn start(&self, z: &[f64]) -> Result<Vec<f64>> {
        let l = self.layout;
        let (sol, eff) = effective_gic_at(self.ac, self.dc, &self.xi, z, FloatingPolicy::PinReference)?;
        let mut x = vec![0.0; l.n_vars()];
        x[l.vd()..l.vd() + l.n_node].copy_from_slice(&sol.vd);
        x[l.z()..l.z() + l.n_sub].copy_from_slice(z);
        for t in 0..l.n_trafo {
            let th = eff.theta[t];
            x[l.i_dc() + t] = th.abs();
            x[l.s_plus() + t] = th.max(0.0);
            x[l.s_minus() + t] = (-th).max(0.0);
        }
        Ok(x)
    }
}

/// AC block: the AC-OPF in penalized mode, warm-started from the previous solve.
#[derive(Debug, Clone, Default)]
pub struct AcBlock {
    warm: Option<Vec<f64>>,
}

impl AcBlock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves with `-<mu, i_ac> + rho/2 ||i_dc - i_ac||^2` added to the cost.
    pub fn solve(&mut self, ac: &AcNetwork, state: &AdmmState, nlp: &NlpOptions, restarts: usize) -> Result<AcOpfResult> {
        let coupling = Coupling::AdmmPenalized {
            mu: state.mu.clone(),
            rho: state.rho,
            i_dc: state.i_dc.clone(),
            i_base: state.i_base.clone(),
        };
        let res = solve_acopf(ac, &coupling, self.warm.as_deref(), nlp, if self.warm.is_some() { 0 } else { restarts })?;
        self.warm = Some(res.nlp.x.clone());
        Ok(res)
    }
}

/// One trace row per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmTraceRow {
    pub t: usize,
    pub p_res: f64,
    pub d_res: f64,
    /// Penalty used during this iteration.
    pub rho: f64,
    pub third_block_objective: f64,
    pub z_b: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmTrace {
    pub rows: Vec<AdmmTraceRow>,
}

impl AdmmTrace {
    /// CSV with header `t,p_res,d_res,rho,third_block_objective,z_b`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    pub placement: Placement,
    pub trace: AdmmTrace,
    pub state: AdmmState,
    /// `max(p, d) < epsilon` was reached.
    pub converged: bool,
}

impl AdmmOutcome {
    pub fn iterations(&self) -> usize {
        self.state.t
    }
}

/// Initial state: zero duals, `z = V/S`, `i_ac` from the circuit without blockers.
pub fn initial_state(ac: &AcNetwork, dc: &DcNetwork, xi: &[f64], budget: usize, opts: &AdmmOptions) -> Result<AdmmState> {
    let s = ac.n_substations();
    let nt = ac.n_transformers();
    let z = match &opts.z0 {
        Some(z) => z.clone(),
        None => vec![if s == 0 { 0.0 } else { (budget.min(s) as f64) / s as f64 }; s],
    };
    let i_ac = match &opts.i_ac0 {
        Some(i) => i.clone(),
        None => effective_gic_at(ac, dc, xi, &vec![0.0; s], FloatingPolicy::PinReference)?.1.i_eff,
    };
    let lambda = opts.lambda0.clone().unwrap_or_else(|| vec![0.0; s]);
    let mu = opts.mu0.clone().unwrap_or_else(|| vec![0.0; nt]);
    if z.len() != s || lambda.len() != s || i_ac.len() != nt || mu.len() != nt {
        return Err(GicError::validation("admm initial vectors have the wrong length"));
    }
    Ok(AdmmState {
        t: 0,
        i_dc: i_ac.clone(),
        i_ac,
        z,
        z_b: Placement::none(s),
        lambda,
        mu,
        rho: opts.rho0,
        p_res: f64::INFINITY,
        d_res: f64::INFINITY,
        i_base: ac.transformer_specs().map(|t| t.i_eff_max).collect(),
    })
}

fn check_status(block: &str, t: usize, status: SolveStatus, policy: FailurePolicy) -> Result<()> {
    if status == SolveStatus::OptimalTolerance {
        return Ok(());
    }
    match policy {
        FailurePolicy::Abort => Err(GicError::Solver(format!("{block} block at iteration {t}: {status}"))),
        FailurePolicy::ContinueBest => {
            log::warn!("{block} block at iteration {t} ended with {status}; continuing with its best iterate");
            Ok(())
        }
    }
}

/// Runs the driver until `max(p, d) < epsilon` or `max_iters`.
pub fn run_admm(
    ac: &AcNetwork,
    dc: &DcNetwork,
    scenario: &GmdScenario,
    budget: usize,
    opts: &AdmmOptions,
) -> Result<AdmmOutcome> {
    let xi = materialize_xi(dc, scenario)?;
    run_admm_with_xi(ac, dc, xi, budget, opts)
}

/// [`run_admm`] with the induced sources already materialized.
pub fn run_admm_with_xi(
    ac: &AcNetwork,
    dc: &DcNetwork,
    xi: Vec<f64>,
    budget: usize,
    opts: &AdmmOptions,
) -> Result<AdmmOutcome> {
    opts.validate()?;
    let mut state = initial_state(ac, dc, &xi, budget, opts)?;
    let mut dc_block = DcBlock::new(ac, dc, xi)?;
    let mut ac_block = AcBlock::new();
    let mut trace = AdmmTrace::default();
    let mut converged = false;

    while state.t < opts.max_iters {
        let prev_u = primal_u(&state);
        let t = state.t + 1;

        state.z_b = knapsack_closed(state.rho, &state.lambda, &state.z, budget);

        let second = dc_block.solve(&state, &opts.nlp)?;

        check_status("second", t, second.status, opts.failure)?;
        state.z = second.z;
        state.i_dc = second.i_dc;

        let third = ac_block.solve(ac, &state, &opts.nlp, opts.restarts)?;

        check_status("third", t, third.nlp.status, opts.failure)?;
        state.i_ac = third.solution.i_eff.clone();

        dual_update(&mut state);
        let (p_res, d_res) = residuals(&state, &prev_u);
        state.p_res = p_res;
        state.d_res = d_res;
        trace.rows.push(AdmmTraceRow {
            t: state.t,
            p_res,
            d_res,
            rho: state.rho,
            third_block_objective: third.nlp.objective,
            z_b: state.z_b.bitstring(),
        });
        log::debug!("admm t {} p {p_res:.3e} d {d_res:.3e} rho {:.1e} z_b {}", state.t, state.rho, state.z_b);

        if p_res.max(d_res) < opts.epsilon {
            converged = true;
            break;
        }
        if opts.nrb.enabled {
            let rho = nrb_update(state.rho, p_res, d_res, opts.nrb.beta, opts.nrb.tau);
            if opts.rescale_duals && rho != state.rho {
                let r = rho / state.rho;
                state.lambda.iter_mut().chain(state.mu.iter_mut()).for_each(|v| *v *= r);
            }
            state.rho = rho;
        }
    }
    Ok(AdmmOutcome { placement: state.z_b.clone(), trace, state, converged })
}
