//! Square sparse linear systems assembled from triplets and solved by sparse
//! LU with a residual check.

use std::collections::HashMap;

use faer::prelude::Solve;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Relative residual accepted after solving.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// `A x = b` under construction. Repeated `(row, col)` entries are summed.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    dim: usize,
    entries: HashMap<(usize, usize), f64>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
            rhs: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        if value != 0.0 {
            *self.entries.entry((row, col)).or_insert(0.0) += value;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    /// Non-zero entries sorted column-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(&(r, c), &v)| (r, c, v))
            .collect();
        t.sort_by_key(|&(r, c, _)| (c, r));
        t
    }

    pub fn nnz(&self) -> usize {
        self.entries.values().filter(|v| **v != 0.0).count()
    }

    /// Non-zero count per row and per column.
    pub fn nnz_profile(&self) -> (Vec<usize>, Vec<usize>) {
        let mut rows = vec![0; self.dim];
        let mut cols = vec![0; self.dim];
        for (&(r, c), &v) in &self.entries {
            if v != 0.0 {
                rows[r] += 1;
                cols[c] += 1;
            }
        }
        (rows, cols)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for (&(r, c), &v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `max_i |(A x - b)_i|`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(&self.rhs)
            .map(|(ax, b)| (ax - b).abs())
            .fold(0.0, f64::max)
    }
}

type Lu = faer::sparse::linalg::solvers::Lu<usize, f64>;

fn factor(entries: &[(usize, usize, f64)], n: usize, kind: &'static str, dim: usize) -> Result<Lu> {
    let singular = |detail: String| Error::Singular { kind, dim, detail };
    let triplets: Vec<_> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| singular(format!("assembly failed: {e:?}")))?;
    a.sp_lu().map_err(|e| match e {
        LuError::SymbolicSingular { index } => singular(format!("no pivot at column {index}")),
        LuError::Generic(e) => singular(format!("factorisation failed: {e:?}")),
    })
}

fn lu_solve(lu: &Lu, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

/// Refines once, then checks finiteness and the residual bound.
fn finish(sys: &SparseSystem, kind: &'static str, solve: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    let singular = |detail: String| Error::Singular { kind, dim: sys.dim, detail };
    let mut x = solve(&sys.rhs);
    let ax = sys.apply(&x);
    let r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    for (xi, dx) in x.iter_mut().zip(solve(&r)) {
        *xi += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(singular("solution has non-finite entries".into()));
    }
    let scale = 1.0 + sys.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let res = sys.residual(&x);
    if res > RESIDUAL_TOL * scale {
        return Err(singular(format!("residual {res:e} after refinement")));
    }
    Ok(x)
}

/// Solves `sys` by sparse LU, refining once against the assembled matrix.
/// `kind` names the system in error messages.
pub fn solve_sparse(sys: &SparseSystem, kind: &'static str) -> Result<Vec<f64>> {
    if sys.dim == 0 {
        return Ok(Vec::new());
    }
    let lu = factor(&sys.triplets(), sys.dim, kind, sys.dim)?;
    finish(sys, kind, |rhs| lu_solve(&lu, rhs))
}

/// Like [`solve_sparse`], for systems whose last `border` rows and columns
/// are dense. Only the leading block is factorised; the border is eliminated
/// through its (small, dense) Schur complement.
///
/// Dense rows otherwise ruin the fill estimate of the sparse LU, which
/// bounds the factors by the pattern of `A^T A`.
pub fn solve_bordered(sys: &SparseSystem, border: usize, kind: &'static str) -> Result<Vec<f64>> {
    let n = sys.dim;
    if border == 0 || border >= n {
        return solve_sparse(sys, kind);
    }
    let m = n - border;
    let mut block = Vec::new();
    let mut right = vec![vec![0.0; m]; border];
    let mut bottom: Vec<Vec<(usize, f64)>> = vec![Vec::new(); border];
    let mut corner = Mat::<f64>::zeros(border, border);
    for (r, c, v) in sys.triplets() {
        match (r < m, c < m) {
            (true, true) => block.push((r, c, v)),
            (true, false) => right[c - m][r] = v,
            (false, true) => bottom[r - m].push((c, v)),
            (false, false) => corner[(r - m, c - m)] = v,
        }
    }
    let lu = factor(&block, m, kind, n)?;
    let y: Vec<Vec<f64>> = right.iter().map(|col| lu_solve(&lu, col)).collect();
    let dot = |row: &[(usize, f64)], x: &[f64]| row.iter().map(|&(c, v)| v * x[c]).sum::<f64>();
    let schur = Mat::from_fn(border, border, |i, j| corner[(i, j)] - dot(&bottom[i], &y[j]));
    let schur_lu = schur.partial_piv_lu();

    finish(sys, kind, |rhs| {
        let z = lu_solve(&lu, &rhs[..m]);
        let g = Mat::from_fn(border, 1, |i, _| rhs[m + i] - dot(&bottom[i], &z));
        let w = schur_lu.solve(&g);
        let mut x = z;
        for (j, yj) in y.iter().enumerate() {
            let wj = w[(j, 0)];
            for (xi, yi) in x.iter_mut().zip(yj) {
                *xi -= yi * wj;
            }
        }
        x.extend((0..border).map(|i| w[(i, 0)]));
        x
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut s = SparseSystem::new(3);
        s.add(0, 0, 4.0);
        s.add(0, 1, 1.0);
        s.add(1, 0, 1.0);
        s.add(1, 1, 3.0);
        s.add(2, 2, 2.0);
        s.add(2, 2, 0.5);
        s.rhs = vec![1.0, 2.0, 5.0];
        let x = solve_sparse(&s, "test").unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
        assert!((x[2] - 2.0).abs() < 1e-14);
        assert_eq!(s.nnz(), 5);
    }

    #[test]
    fn bordered_matches_plain() {
        // Tridiagonal body with a dense last row and column.
        let n = 40;
        let mut s = SparseSystem::new(n);
        for i in 0..n {
            s.add(i, i, 4.0 + i as f64 * 0.01);
            if i + 1 < n {
                s.add(i, i + 1, -1.0);
                s.add(i + 1, i, -1.5);
            }
            s.add(n - 1, i, 0.5);
            s.add(i, n - 1, 0.25);
            s.rhs[i] = (i as f64).sin();
        }
        let plain = solve_sparse(&s, "test").unwrap();
        for border in [1, 2, 5] {
            let x = solve_bordered(&s, border, "test").unwrap();
            for (a, b) in x.iter().zip(&plain) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structurally_singular_is_an_error() {
        let mut s = SparseSystem::new(3);
        s.add(0, 0, 1.0);
        s.add(1, 0, 1.0);
        s.add(2, 2, 1.0);
        s.rhs = vec![1.0, 1.0, 1.0];
        assert!(matches!(solve_sparse(&s, "test"), Err(Error::Singular { .. })));
    }

    #[test]
    fn numerically_singular_is_an_error() {
        let mut s = SparseSystem::new(2);
        s.add(0, 0, 1.0);
        s.add(0, 1, 2.0);
        s.add(1, 0, 2.0);
        s.add(1, 1, 4.0);
        s.rhs = vec![1.0, 3.0];
        assert!(solve_sparse(&s, "test").is_err());
    }
}
