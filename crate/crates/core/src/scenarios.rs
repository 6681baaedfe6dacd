//! Benchmark systems: the sampled double integrator with its three constraint boxes, and the
//! scalar integrator used to illustrate the sets.

use nalgebra::{dmatrix, DMatrix};

use crate::plant::LtiPlant;
use crate::polytope::HPolyhedron;

/// `x+ = [1 0.1; 0 1] x + [0; 0.1] u`, `y = (x1, x2, u)`, `z = x1`, `t_s = 0.1`.
pub fn double_integrator() -> LtiPlant {
    LtiPlant::new(
        dmatrix![1.0, 0.1; 0.0, 1.0],
        dmatrix![0.0; 0.1],
        dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0],
        dmatrix![0.0; 0.0; 1.0],
        dmatrix![1.0, 0.0],
        dmatrix![0.0],
        0.1,
    )
    .expect("double integrator is well formed")
}

/// `[-1, 1] x [-0.25, 0.25] x [-0.25, 0.25]`.
pub fn y1() -> HPolyhedron {
    HPolyhedron::from_box(&[-1.0, -0.25, -0.25], &[1.0, 0.25, 0.25]).expect("valid box")
}

/// `[-1, 1] x [-1, 1] x [-0.05, 0.05]`.
pub fn y2() -> HPolyhedron {
    HPolyhedron::from_box(&[-1.0, -1.0, -0.05], &[1.0, 1.0, 0.05]).expect("valid box")
}

/// `[-20, 20] x [-1, 1] x [-0.25, 0.25]`.
pub fn y3() -> HPolyhedron {
    HPolyhedron::from_box(&[-20.0, -1.0, -0.25], &[20.0, 1.0, 0.25]).expect("valid box")
}

/// `x+ = x + u`, `y = (x, u)`, `z = x`.
pub fn scalar_integrator() -> LtiPlant {
    LtiPlant::new(
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0; 0.0],
        dmatrix![0.0; 1.0],
        dmatrix![1.0],
        dmatrix![0.0],
        1.0,
    )
    .expect("scalar integrator is well formed")
}

/// `|x| <= 1`, `|u| <= 0.25`.
pub fn scalar_y() -> HPolyhedron {
    HPolyhedron::from_box(&[-1.0, -0.25], &[1.0, 0.25]).expect("valid box")
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}
