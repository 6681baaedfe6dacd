//! Condensed tracking MPC: prediction matrices, the online QP, feasible sets and horizon search.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{ConstraintSpec, EquilibriumMap, LtiPlant};
use crate::polytope::{HPolyhedron, PolytopeError, ProjectionOptions};
use crate::solver::{feasible_point, QpSolver, RowMatrix, SolveStatus, SolverError};
use crate::synthesis::{solve_dare, terminal_set, RiccatiSolution, SynthesisError, TerminalSet};
use crate::{par, TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("OCP infeasible at x = {x:?}, v = {v:?}")]
    Infeasible { x: Vec<f64>, v: Vec<f64> },
    #[error("QP solver stopped with status {0:?}")]
    Solver(SolveStatus),
    #[error("no feasible horizon <= {0}")]
    NoFeasibleHorizon(usize),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Qp(#[from] SolverError),
}

/// Everything that defines the optimal control problem apart from the plant.
#[derive(Debug, Clone)]
pub struct OcpDesign {
    pub n: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub riccati: RiccatiSolution,
    pub terminal: TerminalSet,
    pub em: EquilibriumMap,
    pub y: HPolyhedron,
}

impl OcpDesign {
    /// Solves the DARE for `(Q, R)` and builds the terminal set with tightening `terminal_eps`.
    pub fn new(
        plant: &LtiPlant,
        em: &EquilibriumMap,
        cs: &ConstraintSpec,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        n: usize,
        terminal_eps: f64,
    ) -> Result<Self, MpcError> {
        let riccati = solve_dare(&plant.a, &plant.b, &q, &r)?;
        let terminal = terminal_set(plant, em, &riccati, &cs.y, terminal_eps)?;
        Ok(Self {
            n,
            q,
            r,
            riccati,
            terminal,
            em: em.clone(),
            y: cs.y.clone(),
        })
    }

    pub fn with_horizon(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.riccati.p
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.riccati.k
    }
}

/// `min 1/2 mu'H mu + mu'W theta` subject to `M mu + L theta <= b`, with `theta = (x, v)`.
///
/// Constraint rows are the output constraints for stages `0..N` in stage order, followed by
/// the terminal rows.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub n: usize,
    pub nx: usize,
    pub nu: usize,
    pub nv: usize,
    pub h: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl CondensedQp {
    pub fn ntheta(&self) -> usize {
        self.nx + self.nv
    }

    pub fn theta(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut t = DVector::zeros(self.ntheta());
        t.rows_mut(0, self.nx).copy_from(x);
        t.rows_mut(self.nx, self.nv).copy_from(v);
        t
    }

    /// The joint polyhedron over `(theta, mu)`.
    pub fn joint_set(&self) -> Result<HPolyhedron, PolytopeError> {
        let nt = self.ntheta();
        let mut a = DMatrix::zeros(self.b.len(), nt + self.m.ncols());
        a.columns_mut(0, nt).copy_from(&self.l);
        a.columns_mut(nt, self.m.ncols()).copy_from(&self.m);
        HPolyhedron::new(a, self.b.clone())
    }
}

/// Free-response and forced-response blocks: `xi_i = Ap[i] x + sum_j Gam[i][j] mu_j`.
struct Prediction {
    a_pow: Vec<DMatrix<f64>>,
    /// `A^k B` for `k = 0..N`.
    ab: Vec<DMatrix<f64>>,
}

impl Prediction {
    fn new(plant: &LtiPlant, n: usize) -> Self {
        let mut a_pow = vec![DMatrix::identity(plant.nx(), plant.nx())];
        for i in 0..n {
            let next = &plant.a * &a_pow[i];
            a_pow.push(next);
        }
        let ab = a_pow.iter().take(n.max(1)).map(|ak| ak * &plant.b).collect();
        Self { a_pow, ab }
    }

    /// `Gamma_i` (nx x N nu): sensitivity of `xi_i` to the stacked inputs.
    fn gamma(&self, i: usize, n: usize, nx: usize, nu: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(nx, n * nu);
        for j in 0..i {
            g.columns_mut(j * nu, nu).copy_from(&self.ab[i - 1 - j]);
        }
        g
    }
}

/// Constraint data `(M, L, b)` for horizon `n`.
fn constraint_data(
    plant: &LtiPlant,
    design: &OcpDesign,
    n: usize,
    pred: &Prediction,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (nx, nu, nv) = (plant.nx(), plant.nu(), design.em.nv());
    let ya = design.y.a();
    let yb = design.y.b();
    let my = ya.nrows();
    let tset = &design.terminal;
    let mt = tset.set.nrows();
    let rows = n * my + mt;
    let mut m = DMatrix::zeros(rows, n * nu);
    let mut l = DMatrix::zeros(rows, nx + nv);
    let mut b = DVector::zeros(rows);
    let yc = ya * &plant.c;
    let yd = ya * &plant.d;
    for i in 0..n {
        let r0 = i * my;
        let gam = pred.gamma(i, n, nx, nu);
        let mut mi = &yc * gam;
        let mut cols = mi.columns_mut(i * nu, nu);
        cols += &yd;
        m.rows_mut(r0, my).copy_from(&mi);
        l.view_mut((r0, 0), (my, nx)).copy_from(&(&yc * &pred.a_pow[i]));
        b.rows_mut(r0, my).copy_from(yb);
    }
    let tx = tset.tx();
    let r0 = n * my;
    m.rows_mut(r0, mt).copy_from(&(&tx * pred.gamma(n, n, nx, nu)));
    l.view_mut((r0, 0), (mt, nx)).copy_from(&(&tx * &pred.a_pow[n]));
    l.view_mut((r0, nx), (mt, nv)).copy_from(&tset.tv());
    b.rows_mut(r0, mt).copy_from(tset.c());
    (m, l, b)
}

/// Condense the OCP. The objective equals the stage-plus-terminal tracking cost minus a
/// term that depends on `theta` only.
pub fn condense(plant: &LtiPlant, design: &OcpDesign) -> Result<CondensedQp, MpcError> {
    let (nx, nu, nv) = (plant.nx(), plant.nu(), design.em.nv());
    if design.terminal.nx != nx || design.terminal.nv != nv || design.y.dim() != plant.ny() {
        return Err(MpcError::Dimension("design does not match the plant".into()));
    }
    if design.q.shape() != (nx, nx) || design.r.shape() != (nu, nu) {
        return Err(MpcError::Dimension(format!(
            "Q {:?}, R {:?}",
            design.q.shape(),
            design.r.shape()
        )));
    }
    let n = design.n;
    let pred = Prediction::new(plant, n);
    let nmu = n * nu;
    let nt = nx + nv;
    let mut h = DMatrix::zeros(nmu, nmu);
    let mut w = DMatrix::zeros(nmu, nt);
    for i in 0..=n {
        let weight = if i < n { &design.q } else { design.p() };
        let gam = pred.gamma(i, n, nx, nu);
        // e_i = Gamma_i mu + [A^i, -G_x] theta
        let mut s = DMatrix::zeros(nx, nt);
        s.columns_mut(0, nx).copy_from(&pred.a_pow[i]);
        s.columns_mut(nx, nv).copy_from(&(-&design.em.gx));
        let gtw = gam.transpose() * weight;
        h += &gtw * &gam;
        w += &gtw * s;
        if i < n {
            // d_i = mu_i - G_u v
            let rows = i * nu;
            let mut hb = h.view_mut((rows, rows), (nu, nu));
            hb += &design.r;
            let mut wb = w.view_mut((rows, nx), (nu, nv));
            wb -= &design.r * &design.em.gu;
        }
    }
    // H = 2 (...) so that 1/2 mu'H mu carries the full quadratic term; symmetrize exactly.
    let h = &h + h.transpose();
    let w = w * 2.0;
    let (m, l, b) = constraint_data(plant, design, n, &pred);
    Ok(CondensedQp {
        n,
        nx,
        nu,
        nv,
        h,
        w,
        m,
        l,
        b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub active_set: Vec<usize>,
    pub value: f64,
    pub time: Duration,
}

/// The MPC law `kappa(x, v)`: first block of the condensed QP minimizer.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub qp: CondensedQp,
    solver: QpSolver,
    rows: RowMatrix,
}

impl MpcController {
    pub fn new(qp: CondensedQp) -> Result<Self, MpcError> {
        if qp.n == 0 {
            return Err(MpcError::Dimension("horizon 0 has no decision variables".into()));
        }
        let solver = QpSolver::new(qp.h.clone())?;
        let rows = RowMatrix::from(&qp.m);
        Ok(Self { qp, solver, rows })
    }

    /// Returns the full minimizer and a solve record. `warm` seeds the active set.
    pub fn solve(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        warm: &[usize],
    ) -> Result<(DVector<f64>, SolveInfo), MpcError> {
        if x.len() != self.qp.nx || v.len() != self.qp.nv {
            return Err(MpcError::Dimension(format!(
                "x has {} entries, v has {}",
                x.len(),
                v.len()
            )));
        }
        let start = Instant::now();
        let theta = self.qp.theta(x, v);
        let f = &self.qp.w * &theta;
        let rhs = &self.qp.b - &self.qp.l * &theta;
        let sol = self.solver.solve(&f, &self.rows, rhs.as_slice(), warm);
        let time = start.elapsed();
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(MpcError::Infeasible {
                    x: x.iter().copied().collect(),
                    v: v.iter().copied().collect(),
                })
            }
            s => return Err(MpcError::Solver(s)),
        }
        let info = SolveInfo {
            iterations: sol.iterations,
            active_set: sol.active_set,
            value: sol.value,
            time,
        };
        Ok((sol.x.expect("optimal solution has x"), info))
    }

    /// `u = kappa(x, v)`.
    pub fn feedback(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        warm: &[usize],
    ) -> Result<(DVector<f64>, SolveInfo), MpcError> {
        let (mu, info) = self.solve(x, v, warm)?;
        Ok((mu.rows(0, self.qp.nu).into_owned(), info))
    }
}

/// `Gamma_N`: projection of the joint constraint set onto `theta`. For `N = 0` this is `T`.
pub fn feasible_set(qp: &CondensedQp, terminal: &TerminalSet) -> Result<HPolyhedron, MpcError> {
    feasible_set_with(qp, terminal, &ProjectionOptions::default())
}

pub fn feasible_set_with(
    qp: &CondensedQp,
    terminal: &TerminalSet,
    opts: &ProjectionOptions,
) -> Result<HPolyhedron, MpcError> {
    if qp.n == 0 {
        return Ok(terminal.set.clone());
    }
    let keep: Vec<usize> = (0..qp.ntheta()).collect();
    Ok(qp.joint_set()?.project_with(&keep, opts)?)
}

/// Phase-1 feasibility of the horizon-`horizon` OCP at `(x, v)`.
pub fn ocp_feasible(
    plant: &LtiPlant,
    design: &OcpDesign,
    x: &DVector<f64>,
    v: &DVector<f64>,
    horizon: usize,
) -> bool {
    let pred = Prediction::new(plant, horizon);
    feasible_with(plant, design, x, v, horizon, &pred)
}

fn feasible_with(
    plant: &LtiPlant,
    design: &OcpDesign,
    x: &DVector<f64>,
    v: &DVector<f64>,
    horizon: usize,
    pred: &Prediction,
) -> bool {
    let (m, l, b) = constraint_data(plant, design, horizon, pred);
    let mut theta = DVector::zeros(x.len() + v.len());
    theta.rows_mut(0, x.len()).copy_from(x);
    theta.rows_mut(x.len(), v.len()).copy_from(v);
    let rhs = b - l * theta;
    if horizon == 0 {
        return rhs.iter().all(|&r| r >= -TOL);
    }
    // Rows without a decision variable are checked directly.
    let mut rows = Vec::with_capacity(m.nrows());
    let mut bs = Vec::with_capacity(m.nrows());
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        let norm = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm < 1e-14 {
            if rhs[i] < -TOL {
                return false;
            }
            continue;
        }
        rows.push(row);
        bs.push(rhs[i]);
    }
    let a = RowMatrix::from_rows(rows, m.ncols());
    feasible_point(&a, &bs).is_some()
}

/// Outcome of the horizon scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NStarReport {
    pub n_star: usize,
    /// `(horizon, feasible)` for every horizon evaluated, in increasing order.
    pub scan: Vec<(usize, bool)>,
    /// False if a feasible horizon was followed by an infeasible one within the scan.
    pub monotone: bool,
}

/// Smallest horizon `<= cap` for which the OCP is feasible at `(x0, r)`, found by an upward
/// scan of per-horizon feasibility LPs. Horizons are evaluated in parallel chunks.
pub fn n_star(
    plant: &LtiPlant,
    design: &OcpDesign,
    x0: &DVector<f64>,
    r: &DVector<f64>,
    cap: usize,
) -> Result<NStarReport, MpcError> {
    let chunk = (4 * par::current_threads()).max(8);
    let mut scan = Vec::new();
    let mut start = 0;
    while start <= cap {
        let end = (start + chunk).min(cap + 1);
        let flags = par::map_range(end - start, |i| {
            ocp_feasible(plant, design, x0, r, start + i)
        });
        scan.extend(flags.iter().enumerate().map(|(i, &f)| (start + i, f)));
        if let Some(first) = scan.iter().position(|&(_, f)| f) {
            let monotone = scan[first..].iter().all(|&(_, f)| f);
            return Ok(NStarReport {
                n_star: scan[first].0,
                scan,
                monotone,
            });
        }
        start = end;
    }
    Err(MpcError::NoFeasibleHorizon(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ConstraintSpec;
    use crate::scenarios;
    use nalgebra::{dmatrix, dvector};

    fn scalar_design(n: usize) -> (LtiPlant, OcpDesign) {
        let plant = scenarios::scalar_integrator();
        let em = plant.equilibrium_basis().unwrap();
        let cs = ConstraintSpec::new(&plant, &em, scenarios::scalar_y(), 0.2).unwrap();
        let d = OcpDesign::new(&plant, &em, &cs, dmatrix![1.0], dmatrix![1.0], n, 0.05).unwrap();
        (plant, d)
    }

    // Direct evaluation of the tracking cost by rolling the model forward.
    fn rollout_cost(plant: &LtiPlant, d: &OcpDesign, mu: &DVector<f64>, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let nu = plant.nu();
        let xs = d.em.state(v);
        let us = d.em.input(v);
        let mut xi = x.clone();
        let mut j = 0.0;
        for i in 0..d.n {
            let ui = mu.rows(i * nu, nu).into_owned();
            let e = &xi - &xs;
            let du = &ui - &us;
            j += (e.transpose() * &d.q * &e)[0] + (du.transpose() * &d.r * &du)[0];
            xi = &plant.a * xi + &plant.b * ui;
        }
        let e = &xi - &xs;
        j + (e.transpose() * d.p() * &e)[0]
    }

    #[test]
    fn one_step_hessian() {
        let (plant, d) = scalar_design(1);
        let qp = condense(&plant, &d).unwrap();
        let p = d.p()[(0, 0)];
        // 1/2 mu'H mu reproduces (R + B'PB) mu^2.
        assert!((qp.h[(0, 0)] - 2.0 * (1.0 + p)).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_rollout_up_to_theta_term() {
        let plant = scenarios::double_integrator();
        let em = plant.equilibrium_basis().unwrap();
        let cs = ConstraintSpec::new(&plant, &em, scenarios::y1(), 0.01).unwrap();
        let d = OcpDesign::new(&plant, &em, &cs, scenarios::identity(2), dmatrix![1.0], 5, 0.01).unwrap();
        let qp = condense(&plant, &d).unwrap();
        let x = dvector![0.3, -0.1];
        let v = dvector![0.2];
        let theta = qp.theta(&x, &v);
        let cond = |mu: &DVector<f64>| 0.5 * (mu.transpose() * &qp.h * mu)[0] + (mu.transpose() * &qp.w * &theta)[0];
        let mu0 = DVector::zeros(5);
        let offset = rollout_cost(&plant, &d, &mu0, &x, &v) - cond(&mu0);
        for k in 0..5 {
            let mu = DVector::from_fn(5, |i, _| ((i * 7 + k * 3) % 5) as f64 * 0.1 - 0.2);
            let diff = rollout_cost(&plant, &d, &mu, &x, &v) - cond(&mu);
            assert!((diff - offset).abs() < 1e-10);
        }
    }

    #[test]
    fn equilibrium_is_zero_cost() {
        let (plant, d) = scalar_design(2);
        let qp = condense(&plant, &d).unwrap();
        let ctl = MpcController::new(qp).unwrap();
        let v = dvector![0.5];
        let (u, _) = ctl.feedback(&d.em.state(&v), &v, &[]).unwrap();
        assert!((u - d.em.input(&v)).amax() < 1e-10);
        assert!(rollout_cost(&plant, &d, &DVector::from_element(2, 0.0), &d.em.state(&v), &v) < 1e-20);
    }

    #[test]
    fn lqr_law_in_the_interior() {
        let plant = scenarios::double_integrator();
        let em = plant.equilibrium_basis().unwrap();
        let cs = ConstraintSpec::new(&plant, &em, scenarios::y1(), 0.01).unwrap();
        let d = OcpDesign::new(&plant, &em, &cs, scenarios::identity(2), dmatrix![1.0], 10, 0.01).unwrap();
        let ctl = MpcController::new(condense(&plant, &d).unwrap()).unwrap();
        let v = dvector![0.1];
        let x = dvector![0.12, 0.01];
        let (u, info) = ctl.feedback(&x, &v, &[]).unwrap();
        assert!(info.active_set.is_empty());
        let lqr = -d.k() * &x + d.em.input(&v) + d.k() * d.em.state(&v);
        assert!((u - lqr).amax() < 1e-8);
    }

    #[test]
    fn feasible_set_zero_horizon_is_terminal_set() {
        let (plant, d) = scalar_design(0);
        let qp = condense(&plant, &d).unwrap();
        assert_eq!(feasible_set(&qp, &d.terminal).unwrap(), d.terminal.set);
        assert!(MpcController::new(qp).is_err());
    }

    #[test]
    fn feasibility_queries_agree_with_projection() {
        let (plant, d) = scalar_design(2);
        let qp = condense(&plant, &d).unwrap();
        let g = feasible_set(&qp, &d.terminal).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                let x = -1.2 + 2.4 * i as f64 / 20.0;
                let v = -1.0 + 2.0 * j as f64 / 20.0;
                let viol = g.max_violation(&[x, v]);
                if viol.abs() < 1e-6 {
                    continue;
                }
                assert_eq!(ocp_feasible(&plant, &d, &dvector![x], &dvector![v], 2), viol < 0.0);
            }
        }
    }

    #[test]
    fn n_star_scan() {
        let (plant, d) = scalar_design(2);
        let v = dvector![0.5];
        let rep = n_star(&plant, &d, &d.em.state(&v), &v, 10).unwrap();
        assert_eq!(rep.n_star, 0);
        let rep = n_star(&plant, &d, &dvector![-1.0], &dvector![0.75], 40).unwrap();
        assert!(rep.n_star > 0 && rep.monotone);
        assert!(!ocp_feasible(&plant, &d, &dvector![-1.0], &dvector![0.75], rep.n_star - 1));
        assert_eq!(
            n_star(&plant, &d, &dvector![-1.0], &dvector![0.75], rep.n_star - 1).unwrap_err(),
            MpcError::NoFeasibleHorizon(rep.n_star - 1)
        );
    }
}
