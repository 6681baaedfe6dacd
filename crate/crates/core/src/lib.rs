//! Linear model predictive control with a feasibility governor.
//!
//! The crate is organised bottom-up:
//!
//! - [`solver`]: dense LP (two-phase simplex) and strictly convex QP (dual active-set) solvers.
//! - [`polytope`]: H-representation polyhedral calculus, including Fourier–Motzkin projection.
//! - [`plant`]: LTI model, equilibrium parameterisation and the steady-state admissible reference set.
//! - [`synthesis`]: DARE/LQR and the tracking maximal output admissible terminal set.
//! - [`mpc`]: OCP condensation, the MPC feedback law, feasible sets and horizon search.
//! - [`governor`]: the feasibility governor and the command governor baseline.
//! - [`sim`]: closed-loop simulation, metrics and invariant audits.
//! - [`scenarios`]: the double-integrator and scalar-integrator benchmark setups.
//!
//! Data-parallel inner loops (redundancy LPs, containment checks, grid oracles, horizon scans)
//! run on rayon when the `parallel` feature is enabled and fall back to plain iterators otherwise.

pub mod governor;
pub mod mpc;
pub mod par;
pub mod plant;
pub mod polytope;
pub mod scenarios;
pub mod sim;
pub mod solver;
pub mod synthesis;

pub use nalgebra::{DMatrix, DVector};

/// Global tolerance for membership, redundancy and feasibility tests.
pub const TOL: f64 = 1e-8;
