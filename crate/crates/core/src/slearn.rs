//! Stochastic learning over Bernoulli placement probabilities.
//!
//! Each substation `i` is blocked with probability `p_i`. An iteration draws
//! `N` budget-feasible placements, evaluates `F` on them concurrently, forms
//! the score-function estimate of `grad E_p[F]` and takes a projected step
//! `p <- clip(p - (a / t) g, delta, 1 - delta)`.
//!
//! The driver feeds the estimator `(F - F(0)) / |F(0)|`, where `F(0)` is the
//! no-blocker objective, so the step constant `a` is dimensionless; raw
//! objective values are kept for reporting. Under the product law the shift
//! leaves the expected gradient unchanged. Under budget truncation it removes
//! a drift proportional to `F(0)` that pushes every `p_i` toward 1. Sample `k` of
//! iteration `t` draws from its own ChaCha stream keyed by `(seed, t, k)`, so
//! results do not depend on how evaluations are scheduled.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acopf::{EvalOptions, Evaluator};
use crate::error::{GicError, Result};
use crate::netmodel::{AcNetwork, DcNetwork, GmdScenario};
use crate::nlpsolve::SolveStatus;
use crate::placement::Placement;

/// Probabilities are kept in `[DELTA, 1 - DELTA]`.
pub const DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlOptions {
    /// Samples per iteration.
    pub n_samples: usize,
    /// Step constant: `eta_t = a / t`.
    pub a: f64,
    /// Stop once the gradient estimate's 2-norm falls below this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub p0: f64,
    /// Feed the estimator `(F - F(0)) / |F(0)|` instead of `F / |F(0)|`.
    pub centered: bool,
    /// Evaluation settings; `None` takes them from the network's config block.
    pub eval: Option<EvalOptions>,
}

impl Default for SlOptions {
    fn default() -> Self {
        Self { n_samples: 8, a: 0.1, epsilon: 1e-3, max_iters: 100, seed: 0, p0: 0.5, centered: true, eval: None }
    }
}

impl SlOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(GicError::validation("sl sample count must be at least 1"));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(GicError::validation("sl step constant must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(GicError::validation("sl epsilon must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(GicError::validation("sl p0 must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlState {
    pub p: Vec<f64>,
    pub t: usize,
    pub last_gradient_norm: f64,
    pub best_seen: Option<(Placement, f64)>,
    /// Objective values enter the estimator as `(F - f_shift) / f_scale`.
    pub f_shift: f64,
    pub f_scale: f64,
}

impl SlState {
    pub fn new(n_substations: usize, p0: f64) -> Self {
        Self {
            p: vec![p0.clamp(DELTA, 1.0 - DELTA); n_substations],
            t: 1,
            last_gradient_norm: f64::INFINITY,
            best_seen: None,
            f_shift: 0.0,
            f_scale: 1.0,
        }
    }

    /// Keeps the lower objective; equal objectives go to the smaller placement.
    fn offer(&mut self, z: &Placement, f: f64) {
        let better = match &self.best_seen {
            None => true,
            Some((bz, bf)) => f < *bf || (f == *bf && z < bz),
        };
        if better {
            self.best_seen = Some((z.clone(), f));
        }
    }
}

/// Draws a placement with at most `budget` ones. Substations are visited in
/// order of decreasing `p` (ties by index); each draws Bernoulli(`p_j`) until
/// the budget is spent.
pub fn sample_budgeted<R: Rng + ?Sized>(p: &[f64], budget: usize, rng: &mut R) -> Placement {
    let mut z = vec![0u8; p.len()];
    if budget == 0 {
        return Placement(z);
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[j].total_cmp(&p[i]));
    let mut left = budget;
    for j in order {
        if rng.random::<f64>() < p[j] {
            z[j] = 1;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    Placement(z)
}

/// Score-function estimate
/// `g = (1/N) sum_k F(z_k) sum_i (z_ki / p_i - (1 - z_ki) / (1 - p_i)) e_i`,
/// with `p` clipped into `[DELTA, 1 - DELTA]`. An empty batch gives zero.
pub fn gradient_estimate(samples: &[Placement], f_values: &[f64], p: &[f64]) -> Vec<f64> {
    assert_eq!(samples.len(), f_values.len(), "one objective value per sample");
    let mut g = vec![0.0; p.len()];
    if samples.is_empty() {
        return g;
    }
    let pc: Vec<f64> = p.iter().map(|v| v.clamp(DELTA, 1.0 - DELTA)).collect();
    for (z, &f) in samples.iter().zip(f_values) {
        for i in 0..p.len() {
            g[i] += f * if z.0[i] == 1 { 1.0 / pc[i] } else { -1.0 / (1.0 - pc[i]) };
        }
    }
    let n = samples.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// One projected step from a batch of raw objective values.
pub fn sl_step(state: &SlState, samples: &[Placement], f_values: &[f64], opts: &SlOptions) -> SlState {
    let mut next = state.clone();
    let scaled: Vec<f64> = f_values.iter().map(|f| (f - state.f_shift) / state.f_scale).collect();
    let g = gradient_estimate(samples, &scaled, &state.p);
    let eta = opts.a / state.t as f64;
    for (p, gi) in next.p.iter_mut().zip(&g) {
        *p = (*p - eta * gi).clamp(DELTA, 1.0 - DELTA);
    }
    next.t += 1;
    next.last_gradient_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (z, &f) in samples.iter().zip(f_values) {
        next.offer(z, f);
    }
    next
}

/// Probability of `z` under independent Bernoulli(`p`).
pub fn bernoulli_probability(p: &[f64], z: &Placement) -> f64 {
    p.iter().zip(&z.0).map(|(&pi, &zi)| if zi == 1 { pi } else { 1.0 - pi }).product()
}

/// All `2^S` placements in lexicographic order.
pub fn all_placements(s: usize) -> Vec<Placement> {
    (0..1u64 << s)
        .map(|m| Placement((0..s).map(|i| ((m >> (s - 1 - i)) & 1) as u8).collect()))
        .collect()
}

/// `Phi(p) = sum_z F(z) prod_i p_i^z_i (1 - p_i)^(1 - z_i)` by enumeration.
pub fn phi_exact(p: &[f64], f: impl Fn(&Placement) -> f64) -> f64 {
    all_placements(p.len()).iter().map(|z| f(z) * bernoulli_probability(p, z)).sum()
}

/// Analytic gradient of [`phi_exact`]: `dPhi/dp_i` is the difference of the
/// objective's expectations conditioned on `z_i = 1` and `z_i = 0`.
pub fn phi_gradient_exact(p: &[f64], f: impl Fn(&Placement) -> f64) -> Vec<f64> {
    let zs = all_placements(p.len());
    let fz: Vec<f64> = zs.iter().map(&f).collect();
    (0..p.len())
        .map(|i| {
            zs.iter()
                .zip(&fz)
                .map(|(z, &v)| {
                    let others: f64 = (0..p.len())
                        .filter(|&j| j != i)
                        .map(|j| if z.0[j] == 1 { p[j] } else { 1.0 - p[j] })
                        .product();
                    if z.0[i] == 1 {
                        v * others
                    } else {
                        -v * others
                    }
                })
                .sum()
        })
        .collect()
}

/// Exact expectation of [`gradient_estimate`] for one unbudgeted sample.
pub fn expected_estimate(p: &[f64], f: impl Fn(&Placement) -> f64) -> Vec<f64> {
    let mut e = vec![0.0; p.len()];
    for z in all_placements(p.len()) {
        let w = bernoulli_probability(p, &z);
        let g = gradient_estimate(std::slice::from_ref(&z), &[f(&z)], p);
        for (ei, gi) in e.iter_mut().zip(g) {
            *ei += w * gi;
        }
    }
    e
}

/// RNG for sample `k` of iteration `t`.
pub fn substream(seed: u64, t: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 32) | k as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlTraceRow {
    pub t: usize,
    pub grad_norm: f64,
    /// `NaN` if every evaluation in the batch failed.
    pub batch_best_f: f64,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlTrace {
    pub rows: Vec<SlTraceRow>,
}

impl SlTrace {
    /// Columns `t, grad_norm, batch_best_F, p_1..p_S`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let s = self.rows.first().map_or(0, |r| r.p.len());
        let mut header = vec!["t".to_string(), "grad_norm".into(), "batch_best_F".into()];
        header.extend((1..=s).map(|i| format!("p_{i}")));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string(), r.grad_norm.to_string(), r.batch_best_f.to_string()];
            rec.extend(r.p.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlOutcome {
    pub placement: Placement,
    pub objective: f64,
    pub state: SlState,
    pub trace: SlTrace,
    /// Distinct placements evaluated.
    pub evaluations: usize,
}

impl SlOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.rows.len()
    }
}

/// Runs stochastic learning for `F` on one network and scenario.
pub fn run_sl(ac: &AcNetwork, dc: &DcNetwork, scenario: &GmdScenario, budget: usize, opts: &SlOptions) -> Result<SlOutcome> {
    opts.validate()?;
    let eval = opts.eval.unwrap_or_else(|| EvalOptions::for_network(ac));
    let evaluator = Evaluator::new(ac, dc, scenario, budget, eval)?;
    run_sl_with(&evaluator, opts)
}

/// [`run_sl`] against an existing (possibly warm) evaluator.
pub fn run_sl_with(evaluator: &Evaluator, opts: &SlOptions) -> Result<SlOutcome> {
    opts.validate()?;
    let s = evaluator.ac.n_substations();
    let budget = evaluator.budget;
    let mut state = SlState::new(s, opts.p0);

    let none = Placement::none(s);
    match evaluator.evaluate(&none) {
        Ok(r) if r.solver_status == SolveStatus::OptimalTolerance && r.objective.abs() > 0.0 => {
            state.f_scale = r.objective.abs();
            if opts.centered {
                state.f_shift = r.objective;
            }
            state.offer(&none, r.objective);
        }
        Ok(r) => log::warn!("sl: no-blocker evaluation ended with {}; objective scale left at 1", r.solver_status),
        Err(e) => log::warn!("sl: no-blocker evaluation failed ({e}); objective scale left at 1"),
    }

    let mut trace = SlTrace::default();
    let draw = |t: usize, p: &[f64]| -> Vec<Placement> {
        (0..opts.n_samples).map(|k| sample_budgeted(p, budget, &mut substream(opts.seed, t, k))).collect()
    };

    while state.t <= opts.max_iters {
        let t = state.t;
        let (samples, f_values) = evaluate_batch(evaluator, draw(t, &state.p), t);
        let batch_best = f_values.iter().copied().fold(f64::NAN, f64::min);
        state = sl_step(&state, &samples, &f_values, opts);
        trace.rows.push(SlTraceRow { t, grad_norm: state.last_gradient_norm, batch_best_f: batch_best, p: state.p.clone() });
        log::debug!("sl t {t} |g| {:.3e} batch best {batch_best:.4} p {:?}", state.last_gradient_norm, state.p);
        if state.last_gradient_norm < opts.epsilon {
            break;
        }
    }

    // Final batch from the terminal probabilities.
    let (samples, f_values) = evaluate_batch(evaluator, draw(state.t, &state.p), state.t);
    for (z, &f) in samples.iter().zip(&f_values) {
        state.offer(z, f);
    }

    let (placement, objective) = state
        .best_seen
        .clone()
        .ok_or_else(|| GicError::Solver("sl: every evaluation failed".into()))?;
    Ok(SlOutcome { placement, objective, state, trace, evaluations: evaluator.evaluations() })
}

/// Evaluates a batch concurrently, dropping failed or non-converged samples.
fn evaluate_batch(evaluator: &Evaluator, samples: Vec<Placement>, t: usize) -> (Vec<Placement>, Vec<f64>) {
    let results: Vec<_> = samples.par_iter().map(|z| evaluator.evaluate(z)).collect();
    let mut kept = Vec::with_capacity(samples.len());
    let mut values = Vec::with_capacity(samples.len());
    for (z, r) in samples.into_iter().zip(results) {
        match r {
            Ok(rep) if rep.solver_status == SolveStatus::OptimalTolerance => {
                kept.push(z);
                values.push(rep.objective);
            }
            Ok(rep) => log::warn!("sl t {t}: dropping {z}, evaluation ended with {}", rep.solver_status),
            Err(e) => log::warn!("sl t {t}: dropping {z}, evaluation failed: {e}"),
        }
    }
    (kept, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_sample_deterministically() {
        let mut rng = substream(1, 1, 0);
        assert_eq!(sample_budgeted(&[1.0, 1.0, 0.0], 2, &mut rng).0, vec![1, 1, 0]);
        assert_eq!(sample_budgeted(&[0.0; 4], 4, &mut rng).0, vec![0; 4]);
        assert_eq!(sample_budgeted(&[1.0; 3], 0, &mut rng).0, vec![0; 3]);
        // Budget 1 with certain draws: the first in descending-p order wins.
        assert_eq!(sample_budgeted(&[1.0, 1.0, 1.0], 1, &mut rng).0, vec![1, 0, 0]);
    }

    #[test]
    fn zero_budget_does_not_touch_the_rng() {
        let mut a = substream(5, 2, 3);
        let mut b = a.clone();
        sample_budgeted(&[0.5; 4], 0, &mut a);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn single_sample_estimate() {
        let g = gradient_estimate(&[Placement(vec![1, 0])], &[2.0], &[0.5, 0.5]);
        assert_eq!(g, vec![4.0, -4.0]);
    }

    #[test]
    fn constant_objective_has_zero_expected_gradient() {
        let e = expected_estimate(&[0.5, 0.5], |_| 3.0);
        assert!(e.iter().all(|v| v.abs() < 1e-14), "{e:?}");
    }

    #[test]
    fn step_projects_and_advances() {
        let opts = SlOptions::default();
        let st = SlState::new(2, 0.5);
        let same = sl_step(&st, &[], &[], &opts);
        assert_eq!(same.p, st.p);
        assert_eq!(same.t, 2);

        let next = sl_step(&st, &[Placement(vec![1, 0])], &[2.0], &opts);
        assert!((next.p[0] - 0.1).abs() < 1e-15 && (next.p[1] - 0.9).abs() < 1e-15, "{:?}", next.p);
        let long = SlOptions { a: 1.0, ..opts };
        let next = sl_step(&st, &[Placement(vec![1, 0])], &[2.0], &long);
        assert_eq!(next.p, vec![DELTA, 1.0 - DELTA]);
        assert_eq!(next.best_seen, Some((Placement(vec![1, 0]), 2.0)));
    }

    #[test]
    fn enumeration_order_is_lexicographic() {
        let zs = all_placements(3);
        assert_eq!(zs.len(), 8);
        assert!(zs.windows(2).all(|w| w[0] < w[1]));
    }
}
