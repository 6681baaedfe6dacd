//! Dense LP and QP solvers.
//!
//! Both solvers work on the inequality form `A x <= b` with free variables.
//! [`solve_lp`] maximizes a linear objective with a two-phase primal simplex;
//! [`solve_qp`] minimizes `1/2 x'Hx + f'x` with a Goldfarb–Idnani dual active-set method.

mod lp;
mod qp;

pub use lp::{feasible_point, lp_rows, solve_lp, solve_lp_with, LpOptions};
pub use qp::{solve_qp, QpOptions, QpSolver};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains non-finite entries")]
    NonFinite,
    #[error("Hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Outcome of a solve. `x` is present iff the status is [`SolveStatus::Optimal`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Option<DVector<f64>>,
    pub value: f64,
    /// Indices of the constraint rows active at the solution.
    pub active_set: Vec<usize>,
    /// Nonnegative multipliers, one per constraint row (zero for inactive rows).
    pub multipliers: Option<DVector<f64>>,
    pub iterations: usize,
}

impl Solution {
    pub(crate) fn failed(status: SolveStatus, iterations: usize) -> Self {
        Self {
            status,
            x: None,
            value: f64::NAN,
            active_set: Vec::new(),
            multipliers: None,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Maximize `c'x` subject to `A x <= b`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, SolverError> {
        if a.nrows() != b.len() || a.ncols() != c.len() {
            return Err(SolverError::Dimension(format!(
                "A is {}x{}, b has {} entries, c has {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        if !(a.iter().chain(b.iter()).chain(c.iter()).all(|v| v.is_finite())) {
            return Err(SolverError::NonFinite);
        }
        Ok(Self { c, a, b })
    }
}

/// Minimize `1/2 x'Hx + f'x` subject to `A x <= b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, SolverError> {
        let n = f.len();
        if h.nrows() != n || h.ncols() != n || a.ncols() != n || a.nrows() != b.len() {
            return Err(SolverError::Dimension(format!(
                "H is {}x{}, f has {}, A is {}x{}, b has {}",
                h.nrows(),
                h.ncols(),
                n,
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if !(h.iter().chain(f.iter()).chain(a.iter()).chain(b.iter()).all(|v| v.is_finite())) {
            return Err(SolverError::NonFinite);
        }
        Ok(Self { h, f, a, b })
    }
}

/// Row-major dense matrix used on the solver hot paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, cols: usize) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged row");
            data.extend(r);
        }
        Self {
            rows: n,
            cols,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl From<&DMatrix<f64>> for RowMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut out = RowMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j] = m[(i, j)];
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
