//! Projected Newton for bound-constrained minimization with a dense Hessian.
//!
//! Variables within `eps = min(1e-3, ||P(x - g) - x||)` of a bound that the
//! gradient pushes against form the active set; they take a scaled gradient
//! step (and so land on the bound after projection). The free block takes a
//! Newton step on the regularized reduced Hessian. Backtracking on the
//! projected path with an Armijo test.

use super::lbfgs::{project, projected_gradient_norm, InnerOptions, InnerReport};

/// Column groups for finite-difference Hessians: no two columns in a group
/// share a row of the sparsity pattern, so one gradient difference per group
/// recovers all of them.
#[derive(Debug, Clone)]
pub(crate) struct Coloring {
    pub groups: Vec<Vec<usize>>,
    /// Sorted row indices of the nonzeros in each column (including the diagonal).
    pub rows: Vec<Vec<usize>>,
}

impl Coloring {
    /// Pattern given as cliques: every pair of variables in a clique interacts.
    pub fn from_cliques(n: usize, cliques: &[Vec<usize>], dense: bool) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        if dense {
            rows = (0..n).map(|_| (0..n).collect()).collect();
        } else {
            for c in cliques {
                for &a in c {
                    rows[a].extend(c.iter().copied());
                }
            }
            for r in &mut rows {
                r.sort_unstable();
                r.dedup();
            }
        }
        // Greedy distance-2 coloring in index order.
        let mut color = vec![usize::MAX; n];
        let mut row_owner: Vec<Vec<usize>> = Vec::new(); // per color, row -> taken
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for j in 0..n {
            let c = (0..groups.len())
                .find(|&c| rows[j].iter().all(|&r| row_owner[c][r] == usize::MAX))
                .unwrap_or_else(|| {
                    groups.push(Vec::new());
                    row_owner.push(vec![usize::MAX; n]);
                    groups.len() - 1
                });
            color[j] = c;
            groups[c].push(j);
            for &r in &rows[j] {
                row_owner[c][r] = j;
            }
        }
        Self { groups, rows }
    }
}

/// Dense Cholesky of `a` (row-major n x n) in place; false if not positive definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Minimizes `f` over the box from `x`. `hess(x, h)` fills the dense
/// row-major Hessian at `x`.
pub(crate) fn minimize_box<F, H>(
    f: &mut F,
    hess: &mut H,
    x: &mut Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    opts: InnerOptions,
) -> InnerReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    H: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    project(x, lo, hi);
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut gt = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let mut d = vec![0.0; n];
    let mut pg = projected_gradient_norm(x, &g, lo, hi);
    let mut delta = 0.0f64;
    let mut stalled = 0;

    let mut it = 0;
    while it < opts.max_iters {
        if pg <= opts.tol {
            break;
        }
        it += 1;
        hess(x, &mut h);
        let eps = pg.min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let fixed = lo[i] == hi[i]
                    || (x[i] <= lo[i] + eps && g[i] > 0.0)
                    || (x[i] >= hi[i] - eps && g[i] < 0.0);
                !fixed
            })
            .collect();
        for i in 0..n {
            let hii = h[i * n + i];
            d[i] = if lo[i] == hi[i] { 0.0 } else { -g[i] / if hii > 1e-8 { hii } else { 1.0 } };
        }

        let m = free.len();
        if m > 0 {
            let mut hf = vec![0.0; m * m];
            let maxdiag = free.iter().fold(0.0f64, |a, &i| a.max(h[i * n + i].abs()));
            let mut solved = false;
            if delta > 0.0 {
                delta = (delta / 4.0).max(1e-12 * (1.0 + maxdiag));
            }
            for _ in 0..40 {
                for (a, &i) in free.iter().enumerate() {
                    for (b, &j) in free.iter().enumerate() {
                        hf[a * m + b] = h[i * n + j];
                    }
                    hf[a * m + a] += delta;
                }
                if cholesky(&mut hf, m) {
                    solved = true;
                    break;
                }
                delta = if delta == 0.0 { 1e-8 * (1.0 + maxdiag) } else { delta * 10.0 };
            }
            if solved {
                let mut rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
                cholesky_solve(&hf, m, &mut rhs);
                for (a, &i) in free.iter().enumerate() {
                    d[i] = rhs[a];
                }
            } else {
                delta = 0.0;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for k in 0..50 {
            for i in 0..n {
                xt[i] = (x[i] + step * d[i]).clamp(lo[i], hi[i]);
            }
            let ft = f(&xt, &mut gt);
            if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
                step *= 0.5;
                continue;
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if ft <= fx + 1e-4 * decrease.min(0.0) && (decrease < 0.0 || ft < fx) {
                accepted = Some(ft);
                break;
            }
            // At the rounding floor of f the Armijo test is blind; take the
            // full step if it is flat to rounding and reduces the gradient.
            if k == 0
                && (ft - fx).abs() <= 1e-13 * (1.0 + fx.abs())
                && projected_gradient_norm(&xt, &gt, lo, hi) < 0.9 * pg
            {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            // Fall back to a projected steepest-descent step.
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                for i in 0..n {
                    xt[i] = (x[i] - step * g[i]).clamp(lo[i], hi[i]);
                }
                let ft = f(&xt, &mut gt);
                let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
                if ft.is_finite() && ft <= fx + 1e-4 * decrease && decrease < 0.0 {
                    std::mem::swap(x, &mut xt);
                    std::mem::swap(&mut g, &mut gt);
                    fx = ft;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            pg = projected_gradient_norm(x, &g, lo, hi);
            if !moved {
                break;
            }
            continue;
        };
        std::mem::swap(x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        let flat = fx - ft <= 1e-12 * (1.0 + fx.abs());
        fx = ft;
        let pg_new = projected_gradient_norm(x, &g, lo, hi);
        stalled = if flat && pg_new > 0.99 * pg { stalled + 1 } else { 0 };
        pg = pg_new;
        if stalled >= 5 {
            break;
        }
    }
    InnerReport { iterations: it, pg_norm: pg, value: fx, converged: pg <= opts.tol }
}
