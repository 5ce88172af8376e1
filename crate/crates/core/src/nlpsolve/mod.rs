//! Smooth bound-constrained NLP solver.
//!
//! Powell-Hestenes-Rockafellar augmented Lagrangian over the general
//! constraints, with each subproblem minimized over the box by projected Newton
//! on a finite-difference Hessian (or projected L-BFGS). Complementarity
//! pairs `(i, j)` become inequality rows `x_i x_j - eps_c <= 0`, with `eps_c`
//! lowered from `comp_eps_start` to `comp_eps_final` by a factor 10 per outer
//! iteration.
//!
//! Objective and constraint rows are scaled once at the starting point by
//! `min(1, 100 / ||grad||_inf)`; reported residuals and multipliers are always
//! in the caller's units.

mod lbfgs;
mod newton;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};
use lbfgs::{project, projected_gradient_norm, InnerOptions, Memory};
use newton::Coloring;

/// Value-and-gradient callback: returns f(x) and writes the gradient.
pub type ObjectiveFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) -> f64 + 'a>;

/// A scalar constraint row touching only `vars`.
///
/// `eval(x, grad)` receives the full point and writes `d c / d x[vars[k]]` into
/// `grad[k]`.
pub struct Constraint<'a> {
    pub name: String,
    pub vars: Vec<usize>,
    pub eval: Box<dyn Fn(&[f64], &mut [f64]) -> f64 + 'a>,
}

impl<'a> Constraint<'a> {
    pub fn new(
        name: impl Into<String>,
        vars: Vec<usize>,
        eval: impl Fn(&[f64], &mut [f64]) -> f64 + 'a,
    ) -> Self {
        Self { name: name.into(), vars, eval: Box::new(eval) }
    }

    /// `sum_k coef[k] * x[vars[k]] + constant`.
    pub fn linear(name: impl Into<String>, vars: Vec<usize>, coef: Vec<f64>, constant: f64) -> Self {
        let idx = vars.clone();
        Self::new(name, vars, move |x, g| {
            g.copy_from_slice(&coef);
            idx.iter().zip(&coef).map(|(&i, c)| c * x[i]).sum::<f64>() + constant
        })
    }
}

impl fmt::Debug for Constraint<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint").field("name", &self.name).field("vars", &self.vars).finish()
    }
}

/// `min f(x)` s.t. `lower <= x <= upper`, `c_eq(x) = 0`, `c_in(x) <= 0`, and
/// `x_i x_j -> 0` for every complementarity pair.
pub struct NlpProblem<'a> {
    pub n_vars: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: ObjectiveFn<'a>,
    pub eq_constraints: Vec<Constraint<'a>>,
    pub ineq_constraints: Vec<Constraint<'a>>,
    pub complementarity_pairs: Vec<(usize, usize)>,
    /// Extra factor applied to the objective on top of the automatic scaling.
    pub objective_scale: f64,
    /// Typical magnitude per variable; the solver iterates on `x / var_scale`.
    pub var_scale: Option<Vec<f64>>,
    /// The objective's Hessian is diagonal. Lets the Newton inner solver
    /// color its finite-difference Hessian instead of treating it as dense.
    pub objective_separable: bool,
}

impl<'a> NlpProblem<'a> {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, objective: impl Fn(&[f64], &mut [f64]) -> f64 + 'a) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            n_vars: lower.len(),
            lower,
            upper,
            objective: Box::new(objective),
            eq_constraints: Vec::new(),
            ineq_constraints: Vec::new(),
            complementarity_pairs: Vec::new(),
            objective_scale: 1.0,
            var_scale: None,
            objective_separable: false,
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.n_vars];
        (self.objective)(x, &mut g)
    }

    /// Largest violation over bounds-free constraint rows, in caller units.
    /// Complementarity rows are measured as `max(x_i x_j - eps, 0)`.
    pub fn max_residual(&self, x: &[f64], comp_eps: f64) -> f64 {
        let mut buf = Vec::new();
        let mut worst = 0.0f64;
        for c in &self.eq_constraints {
            buf.resize(c.vars.len(), 0.0);
            worst = worst.max((c.eval)(x, &mut buf).abs());
        }
        for c in &self.ineq_constraints {
            buf.resize(c.vars.len(), 0.0);
            worst = worst.max((c.eval)(x, &mut buf).max(0.0));
        }
        for &(i, j) in &self.complementarity_pairs {
            worst = worst.max((x[i] * x[j] - comp_eps).max(0.0));
        }
        worst
    }

    pub fn max_complementarity(&self, x: &[f64]) -> f64 {
        self.complementarity_pairs.iter().fold(0.0f64, |m, &(i, j)| m.max(x[i] * x[j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlpOptions {
    /// Constraint residual tolerance (caller units).
    pub tol: f64,
    /// Projected-gradient tolerance on the scaled Lagrangian, relative to
    /// `max(1, largest multiplier)`.
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho0: f64,
    pub rho_max: f64,
    pub comp_eps_start: f64,
    pub comp_eps_final: f64,
    pub lbfgs_memory: usize,
    pub inner: InnerMethod,
}

/// Subproblem solver on the box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Projected Newton; the Hessian of the Lagrangian part comes from
    /// colored gradient differences, the penalty part `rho J^T J` is exact.
    #[default]
    Newton,
    /// Projected limited-memory BFGS.
    Lbfgs,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            opt_tol: 1e-6,
            max_outer: 50,
            max_inner: 500,
            rho0: 10.0,
            rho_max: 1e12,
            comp_eps_start: 1e-2,
            comp_eps_final: 1e-8,
            lbfgs_memory: 10,
            inner: InnerMethod::Newton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    OptimalTolerance,
    IterationLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::OptimalTolerance => "optimal-tolerance",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub comp_multipliers: Vec<f64>,
    pub status: SolveStatus,
    /// Total inner iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// True max constraint violation at `x`, caller units.
    pub max_residual: f64,
    pub max_complementarity: f64,
}

/// Problem in scaled variables `y = x / d`, with scaled rows.
struct Scaled<'p, 'a> {
    p: &'p NlpProblem<'a>,
    d: Vec<f64>,
    f_scale: f64,
    eq_scale: Vec<f64>,
    in_scale: Vec<f64>,
    comp_scale: Vec<f64>,
    x: std::cell::RefCell<Vec<f64>>,
    buf: std::cell::RefCell<Vec<f64>>,
}

/// Row values of one evaluation, scaled.
struct Rows {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    comp: Vec<f64>,
}

impl<'p, 'a> Scaled<'p, 'a> {
    fn to_x(&self, y: &[f64]) -> std::cell::RefMut<'_, Vec<f64>> {
        let mut x = self.x.borrow_mut();
        for i in 0..y.len() {
            x[i] = y[i] * self.d[i];
        }
        x
    }

    fn rows(&self, y: &[f64], eps_c: f64) -> Rows {
        let x = self.to_x(y);
        let mut buf = self.buf.borrow_mut();
        let mut eval = |c: &Constraint, s: f64| {
            buf.resize(c.vars.len(), 0.0);
            s * (c.eval)(&x, &mut buf)
        };
        let eq = self.p.eq_constraints.iter().zip(&self.eq_scale).map(|(c, &s)| eval(c, s)).collect();
        let ineq = self.p.ineq_constraints.iter().zip(&self.in_scale).map(|(c, &s)| eval(c, s)).collect();
        let comp = self
            .p
            .complementarity_pairs
            .iter()
            .zip(&self.comp_scale)
            .map(|(&(i, j), &s)| s * (x[i] * x[j] - eps_c))
            .collect();
        Rows { eq, ineq, comp }
    }

    /// Augmented Lagrangian value and gradient in `y`. Non-finite -> +inf.
    fn augmented(&self, y: &[f64], g: &mut [f64], st: &AlState) -> f64 {
        let x = self.to_x(y);
        let mut gx = vec![0.0; y.len()];
        let mut val = self.f_scale * (self.p.objective)(&x, &mut gx);
        gx.iter_mut().for_each(|v| *v *= self.f_scale);
        let mut buf = self.buf.borrow_mut();
        let rho = st.rho;
        for (k, c) in self.p.eq_constraints.iter().enumerate() {
            buf.resize(c.vars.len(), 0.0);
            let s = self.eq_scale[k];
            let ck = s * (c.eval)(&x, &mut buf);
            let w = st.lam_eq[k] + rho * ck;
            val += st.lam_eq[k] * ck + 0.5 * rho * ck * ck;
            for (&i, gi) in c.vars.iter().zip(buf.iter()) {
                gx[i] += w * s * gi;
            }
        }
        for (k, c) in self.p.ineq_constraints.iter().enumerate() {
            buf.resize(c.vars.len(), 0.0);
            let s = self.in_scale[k];
            let ck = s * (c.eval)(&x, &mut buf);
            let lam = st.lam_in[k];
            let w = (lam + rho * ck).max(0.0);
            val += (w * w - lam * lam) / (2.0 * rho);
            if w > 0.0 {
                for (&i, gi) in c.vars.iter().zip(buf.iter()) {
                    gx[i] += w * s * gi;
                }
            }
        }
        for (k, &(i, j)) in self.p.complementarity_pairs.iter().enumerate() {
            let s = self.comp_scale[k];
            let ck = s * (x[i] * x[j] - st.eps_c);
            let lam = st.lam_comp[k];
            let w = (lam + rho * ck).max(0.0);
            val += (w * w - lam * lam) / (2.0 * rho);
            if w > 0.0 {
                gx[i] += w * s * x[j];
                gx[j] += w * s * x[i];
            }
        }
        for i in 0..y.len() {
            g[i] = gx[i] * self.d[i];
        }
        if val.is_finite() {
            val
        } else {
            f64::INFINITY
        }
    }
}

impl<'p, 'a> Scaled<'p, 'a> {
    /// Multiplier weights `lambda + rho c` (clipped at 0 for inequalities).
    fn weights(&self, y: &[f64], st: &AlState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let r = self.rows(y, st.eps_c);
        let eq = r.eq.iter().zip(&st.lam_eq).map(|(c, l)| l + st.rho * c).collect();
        let ineq = r.ineq.iter().zip(&st.lam_in).map(|(c, l)| (l + st.rho * c).max(0.0)).collect();
        let comp = r.comp.iter().zip(&st.lam_comp).map(|(c, l)| (l + st.rho * c).max(0.0)).collect();
        (eq, ineq, comp)
    }

    /// Gradient in `y` of `f + sum w_k c_k` with the weights held fixed.
    fn lagrangian_grad(&self, y: &[f64], w: &(Vec<f64>, Vec<f64>, Vec<f64>), g: &mut [f64]) {
        let x = self.to_x(y);
        let mut gx = vec![0.0; y.len()];
        (self.p.objective)(&x, &mut gx);
        gx.iter_mut().for_each(|v| *v *= self.f_scale);
        let mut buf = self.buf.borrow_mut();
        let rows = self.p.eq_constraints.iter().zip(&self.eq_scale).zip(&w.0);
        let rows = rows.chain(self.p.ineq_constraints.iter().zip(&self.in_scale).zip(&w.1));
        for ((c, &s), &wk) in rows {
            if wk == 0.0 {
                continue;
            }
            buf.resize(c.vars.len(), 0.0);
            (c.eval)(&x, &mut buf);
            for (&i, gi) in c.vars.iter().zip(buf.iter()) {
                gx[i] += wk * s * gi;
            }
        }
        for ((&(i, j), &s), &wk) in self.p.complementarity_pairs.iter().zip(&self.comp_scale).zip(&w.2) {
            gx[i] += wk * s * x[j];
            gx[j] += wk * s * x[i];
        }
        for i in 0..y.len() {
            g[i] = gx[i] * self.d[i];
        }
    }

    /// Dense Hessian (row-major) of the augmented Lagrangian in `y`.
    fn hessian(&self, y: &[f64], st: &AlState, col: &Coloring, hi: &[f64], h: &mut [f64]) {
        let n = y.len();
        h.iter_mut().for_each(|v| *v = 0.0);
        let w = self.weights(y, st);
        let mut g0 = vec![0.0; n];
        self.lagrangian_grad(y, &w, &mut g0);
        let mut yp = y.to_vec();
        let mut g1 = vec![0.0; n];
        let mut steps = vec![0.0; n];
        for grp in &col.groups {
            for &j in grp {
                let mut hj = 1e-7 * (1.0 + y[j].abs());
                if y[j] + hj > hi[j] {
                    hj = -hj;
                }
                steps[j] = hj;
                yp[j] = y[j] + hj;
            }
            self.lagrangian_grad(&yp, &w, &mut g1);
            for &j in grp {
                yp[j] = y[j];
                for &r in &col.rows[j] {
                    h[r * n + j] = (g1[r] - g0[r]) / steps[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (h[i * n + j] + h[j * n + i]);
                h[i * n + j] = m;
                h[j * n + i] = m;
            }
        }
        // Penalty curvature rho * grad c grad c^T over equality and active rows.
        let x = self.to_x(y);
        let mut buf = self.buf.borrow_mut();
        let rho = st.rho;
        let mut add_outer = |vars: &[usize], gr: &[f64]| {
            for (a, &i) in vars.iter().enumerate() {
                for (b, &j) in vars.iter().enumerate() {
                    h[i * n + j] += rho * gr[a] * gr[b];
                }
            }
        };
        let rows = self.p.eq_constraints.iter().zip(&self.eq_scale).map(|(c, s)| (c, s, true));
        let rows = rows.chain(self.p.ineq_constraints.iter().zip(&self.in_scale).zip(&w.1).map(|((c, s), &wk)| (c, s, wk > 0.0)));
        for (c, &s, on) in rows {
            if !on {
                continue;
            }
            buf.resize(c.vars.len(), 0.0);
            (c.eval)(&x, &mut buf);
            let gr: Vec<f64> = c.vars.iter().zip(buf.iter()).map(|(&i, gi)| s * gi * self.d[i]).collect();
            add_outer(&c.vars, &gr);
        }
        for ((&(i, j), &s), &wk) in self.p.complementarity_pairs.iter().zip(&self.comp_scale).zip(&w.2) {
            if wk > 0.0 {
                add_outer(&[i, j], &[s * x[j] * self.d[i], s * x[i] * self.d[j]]);
            }
        }
    }
}

struct AlState {
    lam_eq: Vec<f64>,
    lam_in: Vec<f64>,
    lam_comp: Vec<f64>,
    rho: f64,
    eps_c: f64,
}

fn row_scale(grad: &[f64], vars: &[usize], d: &[f64]) -> f64 {
    let m = grad.iter().zip(vars).fold(0.0f64, |m, (g, &i)| m.max((g * d[i]).abs()));
    if m > 100.0 {
        100.0 / m
    } else {
        1.0
    }
}

/// Evaluates every callback at `x0`, failing on the first non-finite one.
fn check_finite(p: &NlpProblem, x: &[f64]) -> Result<()> {
    let mut g = vec![0.0; p.n_vars];
    let f = (p.objective)(x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(GicError::NonFinite("objective at the starting point".into()));
    }
    for c in p.eq_constraints.iter().chain(&p.ineq_constraints) {
        let mut g = vec![0.0; c.vars.len()];
        let v = (c.eval)(x, &mut g);
        if !v.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(GicError::NonFinite(format!("constraint '{}' at the starting point", c.name)));
        }
    }
    Ok(())
}

fn hessian_coloring(p: &NlpProblem) -> Coloring {
    let mut cliques: Vec<Vec<usize>> =
        p.eq_constraints.iter().chain(&p.ineq_constraints).map(|c| c.vars.clone()).collect();
    cliques.extend(p.complementarity_pairs.iter().map(|&(i, j)| vec![i, j]));
    Coloring::from_cliques(p.n_vars, &cliques, !p.objective_separable)
}

/// Solves `p` from `x0` (projected onto the box first).
pub fn solve(p: &NlpProblem, x0: &[f64], opts: &NlpOptions) -> Result<NlpSolution> {
    let n = p.n_vars;
    if x0.len() != n || p.lower.len() != n || p.upper.len() != n {
        return Err(GicError::validation("starting point or bounds have the wrong length"));
    }
    if let Some(i) = (0..n).find(|&i| !(p.lower[i] <= p.upper[i])) {
        return Err(GicError::validation(format!("bounds of variable {i} are inverted")));
    }
    let d = p.var_scale.clone().unwrap_or_else(|| vec![1.0; n]);
    if d.len() != n || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(GicError::validation("var_scale must be positive and finite"));
    }
    let mut x_start = x0.to_vec();
    project(&mut x_start, &p.lower, &p.upper);
    check_finite(p, &x_start)?;

    // Scaling from gradients at the start.
    let mut g = vec![0.0; n];
    (p.objective)(&x_start, &mut g);
    let f_scale = p.objective_scale * row_scale(&g, &(0..n).collect::<Vec<_>>(), &d);
    let scale_rows = |rows: &[Constraint]| -> Vec<f64> {
        rows.iter()
            .map(|c| {
                let mut g = vec![0.0; c.vars.len()];
                (c.eval)(&x_start, &mut g);
                row_scale(&g, &c.vars, &d)
            })
            .collect()
    };
    let eq_scale = scale_rows(&p.eq_constraints);
    let in_scale = scale_rows(&p.ineq_constraints);
    let comp_scale = p
        .complementarity_pairs
        .iter()
        .map(|&(i, j)| row_scale(&[x_start[j], x_start[i]], &[i, j], &d))
        .collect();
    let sc = Scaled {
        p,
        d: d.clone(),
        f_scale,
        eq_scale,
        in_scale,
        comp_scale,
        x: std::cell::RefCell::new(vec![0.0; n]),
        buf: std::cell::RefCell::new(Vec::new()),
    };
    let lo: Vec<f64> = (0..n).map(|i| p.lower[i] / d[i]).collect();
    let hi: Vec<f64> = (0..n).map(|i| p.upper[i] / d[i]).collect();
    let mut y: Vec<f64> = (0..n).map(|i| x_start[i] / d[i]).collect();

    let has_comp = !p.complementarity_pairs.is_empty();
    let mut st = AlState {
        lam_eq: vec![0.0; p.eq_constraints.len()],
        lam_in: vec![0.0; p.ineq_constraints.len()],
        lam_comp: vec![0.0; p.complementarity_pairs.len()],
        rho: opts.rho0,
        eps_c: if has_comp { opts.comp_eps_start } else { opts.comp_eps_final },
    };
    let mut mem = Memory::new(opts.lbfgs_memory);
    let mut coloring: Option<Coloring> = None;
    let mut omega = (opts.opt_tol * 1e4).min(1e-2).max(opts.opt_tol);
    let mut prev_infeas = f64::INFINITY;
    let mut total_inner = 0;
    let mut stagnant = 0;

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut status = SolveStatus::IterationLimit;
    let mut outer = 0;

    while outer < opts.max_outer {
        outer += 1;
        let inner_opts = InnerOptions { tol: omega, max_iters: opts.max_inner };
        let report = {
            let mut f = |yy: &[f64], gg: &mut [f64]| sc.augmented(yy, gg, &st);
            match opts.inner {
                InnerMethod::Lbfgs => lbfgs::minimize_box(&mut f, &mut y, &lo, &hi, &mut mem, inner_opts),
                InnerMethod::Newton => {
                    let col = coloring.get_or_insert_with(|| hessian_coloring(p));
                    let mut h = |yy: &[f64], hh: &mut [f64]| sc.hessian(yy, &st, col, &hi, hh);
                    newton::minimize_box(&mut f, &mut h, &mut y, &lo, &hi, inner_opts)
                }
            }
        };
        total_inner += report.iterations;

        let rows = sc.rows(&y, st.eps_c);
        let mut infeas = 0.0f64;
        for (k, &c) in rows.eq.iter().enumerate() {
            infeas = infeas.max(c.abs());
            st.lam_eq[k] += st.rho * c;
        }
        for (k, &c) in rows.ineq.iter().enumerate() {
            infeas = infeas.max(c.max(-st.lam_in[k] / st.rho).abs());
            st.lam_in[k] = (st.lam_in[k] + st.rho * c).max(0.0);
        }
        for (k, &c) in rows.comp.iter().enumerate() {
            infeas = infeas.max(c.max(-st.lam_comp[k] / st.rho).abs());
            st.lam_comp[k] = (st.lam_comp[k] + st.rho * c).max(0.0);
        }

        let x: Vec<f64> = (0..n).map(|i| y[i] * d[i]).collect();
        let resid = p.max_residual(&x, opts.comp_eps_final.max(st.eps_c));
        let obj = p.objective_value(&x);
        let better = match &best {
            None => true,
            Some((br, bo, _)) => {
                let feas = resid <= opts.tol;
                let bfeas = *br <= opts.tol;
                match (feas, bfeas) {
                    (true, true) => obj < *bo,
                    (true, false) => true,
                    (false, true) => false,
                    (false, false) => resid < *br,
                }
            }
        };
        if better {
            best = Some((resid, obj, x.clone()));
        }

        // Stationarity of the Lagrangian with the updated multipliers.
        let mut gy = vec![0.0; n];
        sc.augmented(&y, &mut gy, &st);
        let pg = projected_gradient_norm(&y, &gy, &lo, &hi);
        let eps_final = st.eps_c <= opts.comp_eps_final;
        let true_resid = p.max_residual(&x, opts.comp_eps_final);
        // Stationarity is judged relative to the multiplier size: the gradient
        // of the Lagrangian is a sum of terms of that magnitude.
        let lam_max = st.lam_eq.iter().chain(&st.lam_in).chain(&st.lam_comp).fold(1.0f64, |a, v| a.max(v.abs()));
        log::trace!(
            "outer {outer}: rho {:.1e} eps_c {:.1e} infeas {infeas:.3e} resid {true_resid:.3e} pg {pg:.3e} lam {lam_max:.2e} inner {} (pg {:.2e}, f {:.6e}, conv {})",
            st.rho,
            st.eps_c,
            report.iterations,
            report.pg_norm,
            report.value,
            report.converged
        );
        if eps_final && true_resid <= opts.tol && pg <= opts.opt_tol * lam_max && omega <= opts.opt_tol {
            status = SolveStatus::OptimalTolerance;
            best = Some((true_resid, obj, x));
            break;
        }

        // Stagnation: the inner solver is exhausting its budget and the
        // constraints no longer move. Further outer rounds only inflate rho.
        stagnant = if report.iterations >= opts.max_inner && infeas > 0.99 * prev_infeas { stagnant + 1 } else { 0 };
        if stagnant >= 3 {
            break;
        }

        if infeas > 0.5 * prev_infeas && infeas > 0.1 * opts.tol {
            if st.rho < opts.rho_max {
                st.rho = (st.rho * 10.0).min(opts.rho_max);
                mem.clear();
            }
        }
        prev_infeas = infeas;
        if has_comp {
            st.eps_c = (st.eps_c * 0.1).max(opts.comp_eps_final);
        }
        omega = (omega * 0.1).max(opts.opt_tol);
    }
    if status != SolveStatus::OptimalTolerance && st.rho >= opts.rho_max {
        status = SolveStatus::Infeasible;
    }

    let (_, objective, x) = best.expect("at least one outer iteration");
    let unscale = |lam: &[f64], s: &[f64]| -> Vec<f64> {
        lam.iter().zip(s).map(|(l, s)| l * s / f_scale).collect()
    };
    Ok(NlpSolution {
        max_residual: p.max_residual(&x, opts.comp_eps_final),
        max_complementarity: p.max_complementarity(&x),
        eq_multipliers: unscale(&st.lam_eq, &sc.eq_scale),
        ineq_multipliers: unscale(&st.lam_in, &sc.in_scale),
        comp_multipliers: unscale(&st.lam_comp, &sc.comp_scale),
        x,
        objective,
        status,
        iterations: total_inner,
        outer_iterations: outer,
    })
}

/// Max relative discrepancy `|fd - an| / max(1, |an|)` between central finite
/// differences (step `1e-6 (1 + |x_i|)`) and analytic gradients, over the
/// objective and every constraint row.
pub fn check_gradients(p: &NlpProblem, x: &[f64]) -> f64 {
    let n = p.n_vars;
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    let mut scratch = vec![0.0; n];

    let mut g = vec![0.0; n];
    (p.objective)(x, &mut g);
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = (p.objective)(&xp, &mut scratch);
        xp[i] = x[i] - h;
        let fm = (p.objective)(&xp, &mut scratch);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
    }

    for c in p.eq_constraints.iter().chain(&p.ineq_constraints) {
        let mut gc = vec![0.0; c.vars.len()];
        let mut tmp = vec![0.0; c.vars.len()];
        (c.eval)(x, &mut gc);
        for (k, &i) in c.vars.iter().enumerate() {
            let h = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = (c.eval)(&xp, &mut tmp);
            xp[i] = x[i] - h;
            let fm = (c.eval)(&xp, &mut tmp);
            xp[i] = x[i];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - gc[k]).abs() / gc[k].abs().max(1.0));
        }
    }
    worst
}
