//! Sparse assembly and linear solves backed by faer.

use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::{Error, Result};

/// Systems with more unknowns than this use the iterative path.
pub const DIRECT_SOLVE_LIMIT: usize = 100_000;

/// Coordinate-format builder; duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SparseBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push(Triplet::new(row, col, value));
        }
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = (usize, usize, f64)>) {
        for (r, c, v) in other {
            self.push(r, c, v);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sums duplicate entries in place.
    pub fn compact(&mut self) {
        self.entries.sort_unstable_by_key(|t| (t.col, t.row));
        let mut out: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(self.entries.len());
        for t in self.entries.drain(..) {
            match out.last_mut() {
                Some(last) if last.row == t.row && last.col == t.col => last.val += t.val,
                _ => out.push(t),
            }
        }
        out.shrink_to_fit();
        self.entries = out;
    }

    /// Diagonal sums, counting duplicates.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for t in self.entries.iter().filter(|t| t.row == t.col) {
            d[t.row] += t.val;
        }
        d
    }

    pub fn build(&self) -> Result<SparseMatrix> {
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(
            self.nrows,
            self.ncols,
            &self.entries,
        )
        .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        Ok(SparseMatrix { mat })
    }
}

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    mat: SparseColMat<usize, f64>,
}

/// Solution of a sparse system with its relative residual per right-hand side.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solutions: Vec<Vec<f64>>,
    pub relative_residual: f64,
    pub iterative: bool,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.mat.compute_nnz()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_add(x, &mut y);
        y
    }

    fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        let m = self.mat.as_ref();
        for j in 0..m.ncols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (i, &v) in m.row_idx_of_col(j).zip(m.val_of_col(j)) {
                y[i] += v * xj;
            }
        }
    }

    fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let m = self.mat.as_ref();
        (0..m.ncols())
            .map(|j| {
                m.row_idx_of_col(j)
                    .zip(m.val_of_col(j))
                    .map(|(i, &v)| v * y[i])
                    .sum()
            })
            .collect()
    }

    fn relative_residual(&self, rhs: &[Vec<f64>], sol: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (b, x) in rhs.iter().zip(sol) {
            let r = self.mul_vec(x);
            let num: f64 = r
                .iter()
                .zip(b)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = b
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            worst = worst.max(num / den);
        }
        worst
    }

    fn to_mat(&self, rhs: &[Vec<f64>]) -> Mat<f64> {
        Mat::from_fn(self.nrows(), rhs.len(), |i, j| rhs[j][i])
    }

    fn check_rhs(&self, rhs: &[Vec<f64>]) -> Result<()> {
        if rhs.iter().any(|b| b.len() != self.nrows()) {
            return Err(Error::Interface(format!(
                "right-hand side length differs from row count {}",
                self.nrows()
            )));
        }
        Ok(())
    }

    fn finish(
        &self,
        rhs: &[Vec<f64>],
        solutions: Vec<Vec<f64>>,
        iterative: bool,
    ) -> Result<SolveOutcome> {
        if solutions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "linear solve produced non-finite values (singular system)".into(),
            ));
        }
        let relative_residual = self.relative_residual(rhs, &solutions);
        Ok(SolveOutcome {
            solutions,
            relative_residual,
            iterative,
        })
    }

    /// Solves a square system by sparse LU (or CGNR above the direct limit).
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Result<SolveOutcome> {
        if self.nrows() != self.ncols() {
            return Err(Error::Interface(
                "square solve on a rectangular matrix".into(),
            ));
        }
        self.check_rhs(rhs)?;
        if self.ncols() > DIRECT_SOLVE_LIMIT {
            return self.solve_iterative(rhs);
        }
        let lu = self
            .mat
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        let x = lu.solve(&self.to_mat(rhs));
        let sol = (0..rhs.len())
            .map(|j| (0..self.ncols()).map(|i| x[(i, j)]).collect())
            .collect();
        self.finish(rhs, sol, false)
    }

    /// Least-squares solve by sparse QR (or CGNR above the direct limit).
    pub fn solve_least_squares(&self, rhs: &[Vec<f64>]) -> Result<SolveOutcome> {
        if self.nrows() < self.ncols() {
            return Err(Error::Interface(
                "least squares needs at least as many rows as columns".into(),
            ));
        }
        self.check_rhs(rhs)?;
        if self.ncols() > DIRECT_SOLVE_LIMIT {
            return self.solve_iterative(rhs);
        }
        let qr = self
            .mat
            .sp_qr()
            .map_err(|e| Error::Solver(format!("sparse QR failed: {e:?}")))?;
        let x = qr.solve_lstsq(&self.to_mat(rhs));
        let sol = (0..rhs.len())
            .map(|j| (0..self.ncols()).map(|i| x[(i, j)]).collect())
            .collect();
        self.finish(rhs, sol, false)
    }

    /// Conjugate gradients on the normal equations.
    pub fn solve_iterative(&self, rhs: &[Vec<f64>]) -> Result<SolveOutcome> {
        self.check_rhs(rhs)?;
        let n = self.ncols();
        let mut solutions = Vec::with_capacity(rhs.len());
        for b in rhs {
            let mut x = vec![0.0; n];
            let mut r = self.tr_mul_vec(b);
            let mut p = r.clone();
            let mut rr: f64 = r.iter().map(|v| v * v).sum();
            let stop = rr * 1e-28;
            for _ in 0..(10 * n).max(1000) {
                if rr <= stop || rr == 0.0 {
                    break;
                }
                let ap = self.mul_vec(&p);
                let pap: f64 = ap.iter().map(|v| v * v).sum();
                if pap == 0.0 {
                    break;
                }
                let alpha = rr / pap;
                x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
                let atap = self.tr_mul_vec(&ap);
                r.iter_mut().zip(&atap).for_each(|(r, v)| *r -= alpha * v);
                let rr_new: f64 = r.iter().map(|v| v * v).sum();
                let beta = rr_new / rr;
                p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
                rr = rr_new;
            }
            solutions.push(x);
        }
        self.finish(rhs, solutions, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut b = SparseBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = SparseBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(0, 0, 2.0);
        b.push(1, 1, 1.0);
        let m = b.build().unwrap();
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 1.0]);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let m = laplacian_1d(40);
        let rhs = vec![vec![1.0; 40]];
        let lu = m.solve(&rhs).unwrap();
        let cg = m.solve_iterative(&rhs).unwrap();
        assert!(lu.relative_residual < 1e-12);
        for (a, b) in lu.solutions[0].iter().zip(&cg.solutions[0]) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn least_squares_overdetermined() {
        let mut b = SparseBuilder::new(3, 2);
        b.push(0, 0, 1.0);
        b.push(1, 0, 1.0);
        b.push(2, 1, 1.0);
        let out = b
            .build()
            .unwrap()
            .solve_least_squares(&[vec![1.0, 2.0, 3.0]])
            .unwrap();
        assert_relative_eq!(out.solutions[0][0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(out.solutions[0][1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut b = SparseBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(1, 0, 1.0);
        let r = b.build().unwrap().solve(&[vec![1.0, 2.0]]);
        assert!(r.is_err());
    }
}
