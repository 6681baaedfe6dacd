//! Feasibility governor and the command-governor baseline.
//!
//! Both solve `min ||v - r||^2` over the slice of a joint `(x, v)` polyhedron at the measured
//! state. The feasibility governor uses `Lambda = Gamma_N ∩ (R^nx x R_eps)`; the command
//! governor uses the terminal set in place of `Gamma_N`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mpc::SolveInfo;
use crate::polytope::{HPolyhedron, PolytopeError};
use crate::solver::{QpSolver, RowMatrix, SolveStatus};
use crate::TOL;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GovernorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state outside governed ROA: x = {0:?}")]
    OutsideRoa(Vec<f64>),
    #[error("admissible reference set is empty")]
    EmptyReferenceSet,
    #[error("governor QP stopped with status {0:?}")]
    Solver(SolveStatus),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

#[derive(Debug, Clone)]
pub struct GovernorProblem {
    /// `Gamma_N` for the feasibility governor, `T` for the command governor.
    pub gamma: HPolyhedron,
    pub r_eps: HPolyhedron,
    pub lambda: HPolyhedron,
    pub nx: usize,
    pub nv: usize,
    ax: DMatrix<f64>,
    av: RowMatrix,
    solver: QpSolver,
}

impl GovernorProblem {
    /// Builds `Lambda = gamma ∩ (R^nx x r_eps)` with redundant rows removed.
    pub fn new(gamma: HPolyhedron, r_eps: HPolyhedron, nx: usize) -> Result<Self, GovernorError> {
        let nv = r_eps.dim();
        if gamma.dim() != nx + nv {
            return Err(GovernorError::Dimension(format!(
                "joint set has dimension {}, expected {} + {}",
                gamma.dim(),
                nx,
                nv
            )));
        }
        if r_eps.is_empty() {
            return Err(GovernorError::EmptyReferenceSet);
        }
        let map: Vec<usize> = (nx..nx + nv).collect();
        let lambda = gamma.intersect(&r_eps.lift(nx + nv, &map)?)?;
        if lambda.is_empty() {
            return Err(GovernorError::EmptyReferenceSet);
        }
        let lambda = lambda.remove_redundancy()?;
        let ax = lambda.a().columns(0, nx).into_owned();
        let av = RowMatrix::from(&lambda.a().columns(nx, nv).into_owned());
        let solver = QpSolver::new(DMatrix::identity(nv, nv)).expect("identity is positive definite");
        Ok(Self {
            gamma,
            r_eps,
            lambda,
            nx,
            nv,
            ax,
            av,
            solver,
        })
    }

    /// Command governor on the terminal set.
    pub fn command_governor(
        terminal: &crate::synthesis::TerminalSet,
        r_eps: HPolyhedron,
    ) -> Result<Self, GovernorError> {
        Self::new(terminal.set.clone(), r_eps, terminal.nx)
    }

    /// `v = argmin ||v - r||^2` subject to `(x, v) in Lambda`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        r: &DVector<f64>,
        warm: &[usize],
    ) -> Result<(DVector<f64>, SolveInfo), GovernorError> {
        if x.len() != self.nx || r.len() != self.nv {
            return Err(GovernorError::Dimension(format!(
                "x has {} entries, r has {}",
                x.len(),
                r.len()
            )));
        }
        let start = Instant::now();
        let rhs = self.lambda.b() - &self.ax * x;
        let sol = self.solver.solve(&(-r), &self.av, rhs.as_slice(), warm);
        let time = start.elapsed();
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(GovernorError::OutsideRoa(x.iter().copied().collect()))
            }
            s => return Err(GovernorError::Solver(s)),
        }
        let v = sol.x.expect("optimal solution has x");
        let info = SolveInfo {
            iterations: sol.iterations,
            active_set: sol.active_set,
            value: (&v - r).norm_squared(),
            time,
        };
        Ok((v, info))
    }

    /// `Pi_x Lambda`: states from which the governed loop is defined.
    pub fn roa(&self) -> Result<HPolyhedron, GovernorError> {
        let keep: Vec<usize> = (0..self.nx).collect();
        Ok(self.lambda.project(&keep)?)
    }

    /// `r* = argmin_{v in R_eps} ||v - r||`.
    pub fn project_reference(&self, r: &DVector<f64>) -> Result<DVector<f64>, GovernorError> {
        project_reference(&self.r_eps, r)
    }

    pub fn contains(&self, x: &DVector<f64>, v: &DVector<f64>, tol: f64) -> bool {
        let w: Vec<f64> = x.iter().chain(v.iter()).copied().collect();
        self.lambda.contains_point(&w, tol)
    }
}

/// Euclidean projection of `r` onto `r_eps`.
pub fn project_reference(r_eps: &HPolyhedron, r: &DVector<f64>) -> Result<DVector<f64>, GovernorError> {
    if r.len() != r_eps.dim() {
        return Err(GovernorError::Dimension(format!("r has {} entries", r.len())));
    }
    let solver = QpSolver::new(DMatrix::identity(r.len(), r.len())).expect("identity is positive definite");
    let sol = solver.solve(&(-r), &RowMatrix::from(r_eps.a()), r_eps.b().as_slice(), &[]);
    match sol.status {
        SolveStatus::Infeasible => Err(GovernorError::EmptyReferenceSet),
        s => sol.x.ok_or(GovernorError::Solver(s)),
    }
}

/// `g(x, r)` on the feasibility-governor problem.
pub fn fg_step(gp: &GovernorProblem, x: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>, GovernorError> {
    gp.step(x, r, &[]).map(|(v, _)| v)
}

/// Command-governor step: the same QP over `T ∩ (R^nx x R_eps)`.
pub fn cg_step(
    terminal: &crate::synthesis::TerminalSet,
    r_eps: &HPolyhedron,
    x: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DVector<f64>, GovernorError> {
    let gp = GovernorProblem::command_governor(terminal, r_eps.clone())?;
    fg_step(&gp, x, r)
}

/// Per-loop governor memory: the current reference and the warm-start active set.
#[derive(Debug, Clone, Default)]
pub struct GovernorState {
    pub v: Option<DVector<f64>>,
    pub warm: Vec<usize>,
    pub last: Option<SolveInfo>,
}

impl GovernorState {
    pub fn step(
        &mut self,
        gp: &GovernorProblem,
        x: &DVector<f64>,
        r: &DVector<f64>,
    ) -> Result<DVector<f64>, GovernorError> {
        let (v, info) = gp.step(x, r, &self.warm)?;
        debug_assert!(gp.contains(x, &v, 1e3 * TOL));
        self.warm = info.active_set.clone();
        self.last = Some(info);
        self.v = Some(v.clone());
        Ok(v)
    }
}
