//! LTI plant, equilibrium manifold and steady-state admissible references.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::polytope::{HPolyhedron, PolytopeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in plant matrix {0}")]
    NonFinite(&'static str),
    #[error("(A, B) is not stabilizable: uncontrollable mode with |lambda| = {0:.6}")]
    NotStabilizable(f64),
    #[error("the equilibrium kernel ker Z is trivial")]
    TrivialKernel,
    #[error("dim ker Z = {nv} differs from the tracking output dimension {nz}; G_z cannot be invertible")]
    KernelDimension { nv: usize, nz: usize },
    #[error("G_z is singular: the tracking output does not parameterize the equilibria")]
    SingularGz,
    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsilonRange(f64),
    #[error("the constraint set must contain the origin in its interior")]
    OriginNotInterior,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// `x+ = A x + B u`, `y = C x + D u`, `z = E x + F u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Sample time in seconds; only used to convert step counts.
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x_next: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self, PlantError> {
        let nx = a.nrows();
        let nu = b.ncols();
        let ny = c.nrows();
        let nz = e.nrows();
        let shape = |name: &str, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.nrows() != r || m.ncols() != c {
                Err(PlantError::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("A", &a, nx, nx)?;
        shape("B", &b, nx, nu)?;
        shape("C", &c, ny, nx)?;
        shape("D", &d, ny, nu)?;
        shape("E", &e, nz, nx)?;
        shape("F", &f, nz, nu)?;
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d), ("E", &e), ("F", &f)] {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(PlantError::NonFinite(name));
            }
        }
        if let Some(lam) = uncontrollable_unstable_mode(&a, &b, 1e-8) {
            return Err(PlantError::NotStabilizable(lam));
        }
        Ok(Self { a, b, c, d, e, f, ts })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
    pub fn nz(&self) -> usize {
        self.e.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> StepOutput {
        assert_eq!(x.len(), self.nx(), "state dimension");
        assert_eq!(u.len(), self.nu(), "input dimension");
        StepOutput {
            x_next: &self.a * x + &self.b * u,
            y: self.output(x, u),
            z: &self.e * x + &self.f * u,
        }
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    /// Basis of `ker Z`, `Z = [A - I, B, 0; E, F, -I]`, normalized so that `G_z = I`.
    pub fn equilibrium_basis(&self) -> Result<EquilibriumMap, PlantError> {
        let (nx, nu, nz) = (self.nx(), self.nu(), self.nz());
        let cols = nx + nu + nz;
        let z = self.z_matrix();
        // Pad to square so the SVD exposes a full right basis.
        let mut sq = DMatrix::zeros(cols.max(z.nrows()), cols);
        sq.rows_mut(0, z.nrows()).copy_from(&z);
        let svd = sq.svd(false, true);
        let vt = svd.v_t.expect("requested V^T");
        let smax = svd.singular_values.max();
        let thresh = 1e-10 * smax.max(f64::MIN_POSITIVE);
        let kernel: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] < thresh)
            .collect();
        if kernel.is_empty() {
            return Err(PlantError::TrivialKernel);
        }
        if kernel.len() != nz {
            return Err(PlantError::KernelDimension {
                nv: kernel.len(),
                nz,
            });
        }
        let mut g = DMatrix::zeros(cols, kernel.len());
        for (k, &i) in kernel.iter().enumerate() {
            g.set_column(k, &vt.row(i).transpose());
        }
        let gz = g.rows(nx + nu, nz).into_owned();
        let gz_svd = gz.clone().svd(false, false).singular_values;
        if gz_svd.min() < 1e-10 * gz_svd.max().max(f64::MIN_POSITIVE) {
            return Err(PlantError::SingularGz);
        }
        let gz_inv = gz.try_inverse().ok_or(PlantError::SingularGz)?;
        let mut g = g * gz_inv;
        if nu == nz {
            // [A - I, B; E, F] is square and nonsingular here, so a pivoted solve gives the basis
            // without the round-off the kernel normalization leaves behind.
            let m = z.columns(0, nx + nu).into_owned();
            let mut rhs = DMatrix::zeros(nx + nz, nz);
            rhs.rows_mut(nx, nz).fill_with_identity();
            if let Some(sol) = m.clone().full_piv_lu().solve(&rhs) {
                if (&m * &sol - &rhs).amax() <= 1e-12 {
                    g.rows_mut(0, nx + nu).copy_from(&sol);
                }
            }
        }
        g.iter_mut().for_each(|v| {
            if v.abs() < 1e-13 {
                *v = 0.0
            }
        });
        // Exact identity in the z block.
        let mut gz = g.rows_mut(nx + nu, nz);
        gz.fill_with_identity();
        Ok(EquilibriumMap {
            gx: g.rows(0, nx).into_owned(),
            gu: g.rows(nx, nu).into_owned(),
            gz: g.rows(nx + nu, nz).into_owned(),
        })
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        let (nx, nu, nz) = (self.nx(), self.nu(), self.nz());
        let mut z = DMatrix::zeros(nx + nz, nx + nu + nz);
        z.view_mut((0, 0), (nx, nx))
            .copy_from(&(&self.a - DMatrix::identity(nx, nx)));
        z.view_mut((0, nx), (nx, nu)).copy_from(&self.b);
        z.view_mut((nx, 0), (nz, nx)).copy_from(&self.e);
        z.view_mut((nx, nx), (nz, nu)).copy_from(&self.f);
        z.view_mut((nx, nx + nu), (nz, nz))
            .copy_from(&(-DMatrix::identity(nz, nz)));
        z
    }
}

/// Equilibria `(x, u, z) = (G_x v, G_u v, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumMap {
    pub gx: DMatrix<f64>,
    pub gu: DMatrix<f64>,
    pub gz: DMatrix<f64>,
}

impl EquilibriumMap {
    pub fn nv(&self) -> usize {
        self.gx.ncols()
    }

    pub fn state(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.gx * v
    }

    pub fn input(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.gu * v
    }

    /// Stacked `G = (G_x; G_u; G_z)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (nx, nu, nz) = (self.gx.nrows(), self.gu.nrows(), self.gz.nrows());
        let mut g = DMatrix::zeros(nx + nu + nz, self.nv());
        g.rows_mut(0, nx).copy_from(&self.gx);
        g.rows_mut(nx, nu).copy_from(&self.gu);
        g.rows_mut(nx + nu, nz).copy_from(&self.gz);
        g
    }

    /// Steady-state constrained output map `C G_x + D G_u`.
    pub fn steady_output(&self, plant: &LtiPlant) -> DMatrix<f64> {
        &plant.c * &self.gx + &plant.d * &self.gu
    }
}

/// `R_eps = {v : (C G_x + D G_u) v in (1 - eps) Y}`, redundancy-free.
pub fn steady_state_ref_set(
    plant: &LtiPlant,
    em: &EquilibriumMap,
    y: &HPolyhedron,
    eps: f64,
) -> Result<HPolyhedron, PlantError> {
    check_epsilon(eps)?;
    check_origin_interior(y)?;
    let map = em.steady_output(plant);
    let pre = y.scale(1.0 - eps).preimage(&map, &DVector::zeros(y.dim()))?;
    Ok(pre.remove_redundancy()?)
}

pub(crate) fn check_epsilon(eps: f64) -> Result<(), PlantError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(PlantError::EpsilonRange(eps))
    }
}

pub(crate) fn check_origin_interior(y: &HPolyhedron) -> Result<(), PlantError> {
    if y.b().iter().all(|&b| b > 0.0) {
        Ok(())
    } else {
        Err(PlantError::OriginNotInterior)
    }
}

/// Constraint data shared by the controller and governor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub y: HPolyhedron,
    pub epsilon: f64,
    pub r_eps: HPolyhedron,
}

impl ConstraintSpec {
    pub fn new(
        plant: &LtiPlant,
        em: &EquilibriumMap,
        y: HPolyhedron,
        epsilon: f64,
    ) -> Result<Self, PlantError> {
        if y.dim() != plant.ny() {
            return Err(PlantError::Dimension(format!(
                "constraint set has dimension {}, plant has ny = {}",
                y.dim(),
                plant.ny()
            )));
        }
        let r_eps = steady_state_ref_set(plant, em, &y, epsilon)?;
        Ok(Self { y, epsilon, r_eps })
    }
}

/// PBH test: returns the modulus of an eigenvalue `|lambda| >= 1 - tol` for which
/// `[A - lambda I, B]` loses rank, if any.
pub fn uncontrollable_unstable_mode(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Option<f64> {
    let n = a.nrows();
    if n == 0 {
        return None;
    }
    let eig = a.complex_eigenvalues();
    for lam in eig.iter() {
        if lam.norm() < 1.0 - tol {
            continue;
        }
        let m = b.ncols();
        let mut pbh = DMatrix::<Complex64>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex64::new(a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lam;
            for j in 0..m {
                pbh[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
            }
        }
        let sv = pbh.svd(false, false).singular_values;
        let smax = sv.max().max(1.0);
        if sv.min() <= tol * smax {
            return Some(lam.norm());
        }
    }
    None
}
