//! Projected limited-memory BFGS for bound-constrained minimization.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient
//! pointing outward, builds an L-BFGS direction over the remaining (free)
//! variables using curvature pairs restricted to them, and backtracks along
//! the projected path `P(x + a d)` with an Armijo test.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOptions {
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerReport {
    pub iterations: usize,
    pub pg_norm: f64,
    pub value: f64,
    pub converged: bool,
}

/// Curvature pairs carried between calls (kept while the objective changes
/// only mildly, e.g. a multiplier update).
#[derive(Debug, Clone)]
pub(crate) struct Memory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Memory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, pairs: VecDeque::with_capacity(capacity) }
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// `-H g` over the free set, two-loop recursion with pairs masked to it.
    fn direction(&self, g: &[f64], free: &[bool], d: &mut [f64]) {
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
        };
        for i in 0..g.len() {
            d[i] = if free[i] { -g[i] } else { 0.0 };
        }
        let mut alphas = Vec::with_capacity(self.pairs.len());
        let mut gamma = None;
        for (s, y) in self.pairs.iter().rev() {
            let sy = dot(s, y);
            let yy = dot(y, y);
            if sy <= 1e-12 * (dot(s, s) * yy).sqrt() || sy <= 0.0 {
                alphas.push(None);
                continue;
            }
            if gamma.is_none() {
                gamma = Some(sy / yy);
            }
            let a = dot(s, d) / sy;
            for i in 0..d.len() {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
            alphas.push(Some((a, sy)));
        }
        let gamma = gamma.unwrap_or(1.0);
        d.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), entry) in self.pairs.iter().zip(alphas.iter().rev()) {
            if let Some((a, sy)) = *entry {
                let b = dot(y, d) / sy;
                for i in 0..d.len() {
                    if free[i] {
                        d[i] += (a - b) * s[i];
                    }
                }
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub(crate) fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// `|| P(x - g) - x ||_inf`.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len()).fold(0.0f64, |m, i| m.max(((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs()))
}

/// Minimizes `f` over the box starting from `x` (overwritten with the result).
/// `f` returns the value and writes the gradient; non-finite values are treated
/// as +inf during the line search.
pub(crate) fn minimize_box<F>(
    f: &mut F,
    x: &mut Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    mem: &mut Memory,
    opts: InnerOptions,
) -> InnerReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    project(x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut d = vec![0.0; n];
    let mut free = vec![true; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut pg = projected_gradient_norm(x, &g, lo, hi);

    let mut it = 0;
    while it < opts.max_iters {
        if pg <= opts.tol {
            return InnerReport { iterations: it, pg_norm: pg, value: fx, converged: true };
        }
        it += 1;
        for i in 0..n {
            let at_lo = x[i] <= lo[i] && g[i] > 0.0;
            let at_hi = x[i] >= hi[i] && g[i] < 0.0;
            free[i] = lo[i] < hi[i] && !at_lo && !at_hi;
        }
        mem.direction(&g, &free, &mut d);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) || !slope.is_finite() {
            mem.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut step = if mem.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dmax.max(1e-300)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = (x[i] + step * d[i]).clamp(lo[i], hi[i]);
            }
            let ft = f(&xt, &mut gt);
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + 1e-4 * decrease {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };

        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-14 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            mem.push(s, y);
        }
        std::mem::swap(x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = ft;
        pg = projected_gradient_norm(x, &g, lo, hi);
    }
    InnerReport { iterations: it, pg_norm: pg, value: fx, converged: pg <= opts.tol }
}
