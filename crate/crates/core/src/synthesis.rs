//! LQR synthesis and the tracking maximal output admissible terminal set.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{
    check_epsilon, check_origin_interior, uncontrollable_unstable_mode, EquilibriumMap, LtiPlant,
    PlantError,
};
use crate::polytope::{HPolyhedron, PolytopeError, Support};
use crate::{par, TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q must be symmetric positive semidefinite")]
    QNotPsd,
    #[error("R must be symmetric positive definite")]
    RNotPd,
    #[error("(A, Q) is not detectable: unobservable mode with |lambda| = {0:.6}")]
    NotDetectable(f64),
    #[error("(A, B) is not stabilizable: uncontrollable mode with |lambda| = {0:.6}")]
    NotStabilizable(f64),
    #[error("Riccati iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("LQR closed loop is not Schur stable (spectral radius {0})")]
    Unstable(f64),
    #[error("terminal set not finitely determined within {0} steps")]
    NotFinitelyDetermined(usize),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self { max_iter: 10_000 }
    }
}

pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution, SynthesisError> {
    solve_dare_with(a, b, q, r, &DareOptions::default())
}

/// Value iteration on `P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA`, started from `P = Q`.
pub fn solve_dare_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &DareOptions,
) -> Result<RiccatiSolution, SynthesisError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(SynthesisError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if !is_symmetric(q) || q.clone().symmetric_eigenvalues().min() < -1e-10 {
        return Err(SynthesisError::QNotPsd);
    }
    if !is_symmetric(r) || r.clone().symmetric_eigenvalues().min() <= 0.0 {
        return Err(SynthesisError::RNotPd);
    }
    if let Some(l) = uncontrollable_unstable_mode(a, b, 1e-8) {
        return Err(SynthesisError::NotStabilizable(l));
    }
    if let Some(l) = uncontrollable_unstable_mode(&a.transpose(), q, 1e-8) {
        return Err(SynthesisError::NotDetectable(l));
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iter {
            return Err(SynthesisError::NoConvergence(opts.max_iter));
        }
        iterations += 1;
        let next = riccati_map(&p, a, b, &at, &bt, q, r);
        let delta = (&next - &p).norm();
        p = next;
        if delta <= 1e-13 * p.norm().max(1.0) {
            break;
        }
    }
    let k = lqr_gain(&p, a, b, r);
    let rho = spectral_radius(&(a - b * &k));
    if rho >= 1.0 {
        return Err(SynthesisError::Unstable(rho));
    }
    Ok(RiccatiSolution { p, k, iterations })
}

fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    at: &DMatrix<f64>,
    bt: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let atpb = at * p * b;
    let s = r + bt * p * b;
    let s_inv_btpa = s
        .clone()
        .cholesky()
        .expect("R + B'PB is positive definite")
        .solve(&(bt * p * a));
    let next = q + at * p * a - atpb * s_inv_btpa;
    (&next + next.transpose()) * 0.5
}

/// `K = (R + B'PB)^{-1} B'PA`.
pub fn lqr_gain(p: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let bt = b.transpose();
    let s = r + &bt * p * b;
    s.cholesky()
        .expect("R + B'PB is positive definite")
        .solve(&(&bt * p * a))
}

/// Frobenius norm of the Riccati fixed-point residual.
pub fn dare_residual(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let next = riccati_map(p, a, b, &a.transpose(), &b.transpose(), q, r);
    (next - p).norm()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-10 * scale
}

/// Terminal set `{(x, v) : T_x x + T_v v <= c}` over the joint coordinates `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet {
    pub set: HPolyhedron,
    pub nx: usize,
    pub nv: usize,
    /// Number of constraint layers beyond the first needed for finite determination.
    pub t_star: usize,
}

impl TerminalSet {
    pub fn tx(&self) -> DMatrix<f64> {
        self.set.a().columns(0, self.nx).into_owned()
    }

    pub fn tv(&self) -> DMatrix<f64> {
        self.set.a().columns(self.nx, self.nv).into_owned()
    }

    pub fn c(&self) -> &DVector<f64> {
        self.set.b()
    }

    /// `X(v)`: the state slice at a fixed reference.
    pub fn state_slice(&self, v: &[f64]) -> Result<HPolyhedron, PolytopeError> {
        let idx: Vec<usize> = (self.nx..self.nx + self.nv).collect();
        self.set.slice(&idx, v)
    }
}

/// Autonomous closed loop on `w = (x, v)` under `u = -K x + (G_u + K G_x) v`.
#[derive(Debug, Clone)]
pub struct TrackingLoop {
    /// `[A - BK, B L; 0, I]` with `L = G_u + K G_x`.
    pub phi: DMatrix<f64>,
    /// `[C - DK, D L]`.
    pub psi: DMatrix<f64>,
    /// `[-K, L]`: the input as a function of `w`.
    pub input: DMatrix<f64>,
}

impl TrackingLoop {
    pub fn new(plant: &LtiPlant, em: &EquilibriumMap, k: &DMatrix<f64>) -> Self {
        let (nx, nu, nv) = (plant.nx(), plant.nu(), em.nv());
        let l = &em.gu + k * &em.gx;
        let mut phi = DMatrix::zeros(nx + nv, nx + nv);
        phi.view_mut((0, 0), (nx, nx)).copy_from(&(&plant.a - &plant.b * k));
        phi.view_mut((0, nx), (nx, nv)).copy_from(&(&plant.b * &l));
        phi.view_mut((nx, nx), (nv, nv)).fill_with_identity();
        let mut psi = DMatrix::zeros(plant.ny(), nx + nv);
        psi.view_mut((0, 0), (plant.ny(), nx))
            .copy_from(&(&plant.c - &plant.d * k));
        psi.view_mut((0, nx), (plant.ny(), nv)).copy_from(&(&plant.d * &l));
        let mut input = DMatrix::zeros(nu, nx + nv);
        input.view_mut((0, 0), (nu, nx)).copy_from(&(-k));
        input.view_mut((0, nx), (nu, nv)).copy_from(&l);
        Self { phi, psi, input }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TerminalSetOptions {
    pub max_steps: usize,
}

impl Default for TerminalSetOptions {
    fn default() -> Self {
        Self { max_steps: 500 }
    }
}

pub fn terminal_set(
    plant: &LtiPlant,
    em: &EquilibriumMap,
    rs: &RiccatiSolution,
    y: &HPolyhedron,
    eps: f64,
) -> Result<TerminalSet, SynthesisError> {
    terminal_set_with(plant, em, rs, y, eps, &TerminalSetOptions::default())
}

/// Finitely determined inner approximation of the maximal output admissible set of the
/// tracking loop: output constraints at every step, plus the steady-state output tightened to
/// `(1 - eps) Y`. Layers are added until the next one is implied by the current set.
pub fn terminal_set_with(
    plant: &LtiPlant,
    em: &EquilibriumMap,
    rs: &RiccatiSolution,
    y: &HPolyhedron,
    eps: f64,
    opts: &TerminalSetOptions,
) -> Result<TerminalSet, SynthesisError> {
    check_epsilon(eps)?;
    check_origin_interior(y)?;
    let (nx, nv) = (plant.nx(), em.nv());
    let w = nx + nv;
    let lp = TrackingLoop::new(plant, em, &rs.k);

    let mut ss = DMatrix::zeros(plant.ny(), w);
    ss.view_mut((0, nx), (plant.ny(), nv))
        .copy_from(&em.steady_output(plant));
    let steady = HPolyhedron::new(y.a() * ss, y.b() * (1.0 - eps))?;

    let mut out_map = lp.psi.clone();
    let layer0 = HPolyhedron::new(y.a() * &out_map, y.b().clone())?;
    let mut set = steady.intersect(&layer0)?.remove_redundancy()?;

    for t in 1..=opts.max_steps {
        out_map = &out_map * &lp.phi;
        let layer = HPolyhedron::new(y.a() * &out_map, y.b().clone())?;
        let rows = layer.rows();
        let q = set.clone();
        let needed: Vec<bool> = par::map(&rows, |(a, b)| match q.support(a) {
            Support::Bounded { value, .. } => value > b + TOL,
            Support::Unbounded => true,
            Support::Empty => false,
        });
        if needed.iter().all(|n| !n) {
            return Ok(TerminalSet {
                set,
                nx,
                nv,
                t_star: t - 1,
            });
        }
        let new_rows: Vec<(Vec<f64>, f64)> = rows
            .into_iter()
            .zip(needed)
            .filter_map(|(r, n)| n.then_some(r))
            .collect();
        let add = HPolyhedron::from_rows_unchecked(w, new_rows);
        set = set.intersect(&add)?.remove_redundancy()?;
    }
    Err(SynthesisError::NotFinitelyDetermined(opts.max_steps))
}
