//! Small direct solvers for the grounded-Laplacian systems of the GIC circuit.

/// Symmetric matrix in skyline (envelope) storage: row `i` keeps columns
/// `first[i]..=i` of the lower triangle.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// Allocates the envelope implied by the off-diagonal pattern `pairs`.
    pub fn with_pattern(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (a, b) in pairs {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            first[hi] = first[hi].min(lo);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut len = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(len);
            len += i - f + 1;
        }
        start.push(len);
        Self { n, first, start, data: vec![0.0; len] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        (c >= self.first[r]).then(|| self.start[r] + c - self.first[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds to entry (i, j) (and its mirror). Panics outside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside skyline envelope");
        self.data[k] += v;
    }

    /// In-place Cholesky `A = L Lᵀ`; fill stays inside the envelope.
    /// Returns `None` when a pivot is not safely positive.
    pub fn cholesky(mut self) -> Option<SkylineCholesky> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut sum = self.data[self.start[i] + j - fi];
                for k in k0..j {
                    sum -= self.data[self.start[i] + k - fi] * self.data[self.start[j] + k - fj];
                }
                if i == j {
                    let diag = self.data[self.start[i] + i - fi];
                    if !(sum > 1e-13 * diag.abs().max(f64::MIN_POSITIVE)) {
                        return None;
                    }
                    self.data[self.start[i] + i - fi] = sum.sqrt();
                } else {
                    let ljj = self.data[self.start[j] + j - fj];
                    self.data[self.start[i] + j - fi] = sum / ljj;
                }
            }
        }
        Some(SkylineCholesky { factor: self })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            let mut s = y[i];
            for k in fi..i {
                s -= row[k - fi] * y[k];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        y
    }
}

/// Dense LU with partial pivoting. Returns `None` for a numerically singular matrix.
pub fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skyline_matches_dense_on_tridiagonal() {
        let n = 6;
        let mut m = SkylineMatrix::with_pattern(n, (1..n).map(|i| (i - 1, i)));
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let dense = m.to_dense();
        let x = m.cholesky().unwrap().solve(&b);
        let y = dense_lu_solve(dense, b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_detected() {
        // Floating two-node Laplacian.
        let mut m = SkylineMatrix::with_pattern(2, [(0, 1)]);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(0, 1, -1.0);
        let dense = m.to_dense();
        assert!(m.cholesky().is_none());
        assert!(dense_lu_solve(dense, vec![1.0, -1.0]).is_none());
    }
}
