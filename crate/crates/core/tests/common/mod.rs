//! Independent oracles shared by the integration tests. Nothing in this file calls the LP or QP
//! solvers; `suites` runs the library against these oracles.
#![allow(dead_code)]

pub mod suites;

use fgmpc::mpc::OcpDesign;
use fgmpc::plant::{ConstraintSpec, EquilibriumMap, LtiPlant};
use fgmpc::polytope::HPolyhedron;
use fgmpc::scenarios;
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vertices of `{x : A x <= b}` by brute force over all `n`-subsets of rows.
pub fn vertices(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<DVector<f64>> {
    let (m, n) = a.shape();
    let mut out: Vec<DVector<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    if n == 0 || m < n {
        return out;
    }
    loop {
        let sub = DMatrix::from_fn(n, n, |i, j| a[(idx[i], j)]);
        let rhs = DVector::from_fn(n, |i, _| b[idx[i]]);
        if sub.determinant().abs() > 1e-10 {
            if let Some(x) = sub.lu().solve(&rhs) {
                let ok = (0..m).all(|i| a.row(i).dot(&x.transpose()) <= b[i] + 1e-9);
                if ok && !out.iter().any(|v| (v - &x).amax() < 1e-9) {
                    out.push(x);
                }
            }
        }
        // Next combination in lexicographic order.
        let Some(i) = (0..n).rev().find(|&i| idx[i] != i + m - n) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn poly_vertices(p: &HPolyhedron) -> Vec<DVector<f64>> {
    vertices(p.a(), p.b())
}

pub fn max_dot(pts: &[DVector<f64>], d: &DVector<f64>) -> f64 {
    pts.iter().map(|p| p.dot(d)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let nrm = v.norm();
        if nrm > 1e-3 && nrm <= 1.0 {
            return v / nrm;
        }
    }
}

/// Random bounded polytope around the origin: `extra` random halfspaces inside a box.
pub fn random_polytope(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = 2 * n + extra;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for j in 0..n {
        let w = rng.gen_range(1.0..3.0);
        a[(2 * j, j)] = 1.0;
        a[(2 * j + 1, j)] = -1.0;
        b[2 * j] = w;
        b[2 * j + 1] = w;
    }
    for i in 2 * n..m {
        let d = random_unit(rng, n);
        a.row_mut(i).copy_from(&d.transpose());
        b[i] = rng.gen_range(0.3..1.5);
    }
    (a, b)
}

/// Mutual equality of two bounded sets given by vertex lists, via support functions in every
/// listed direction.
pub fn same_support(p: &[DVector<f64>], q: &[DVector<f64>], dirs: &[DVector<f64>], tol: f64) -> Result<(), String> {
    for d in dirs {
        let (hp, hq) = (max_dot(p, d), max_dot(q, d));
        if (hp - hq).abs() > tol {
            return Err(format!("support mismatch along {:?}: {hp} vs {hq}", d.as_slice()));
        }
    }
    Ok(())
}

/// Nested grid search for `min 1/2 x'Hx + f'x` on `A x <= b` inside the box `[-w, w]^n`.
///
/// Each level evaluates a uniform grid around the incumbent. The window is recentred without
/// shrinking while the incumbent keeps moving, which lets the search walk along active faces.
pub fn qp_grid_oracle(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: f64,
    resolution: f64,
) -> Option<(DVector<f64>, f64)> {
    let n = f.len();
    let obj = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + f.dot(x);
    let feasible = |x: &DVector<f64>| (0..a.nrows()).all(|i| a.row(i).dot(&x.transpose()) <= b[i]);
    let pts = 15usize;
    let mut half = w;
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut center: DVector<f64> = DVector::zeros(n);
    for _ in 0..2000 {
        if half <= resolution {
            break;
        }
        let step = 2.0 * half / (pts - 1) as f64;
        for idx in 0..pts.pow(n as u32) {
            let mut rem = idx;
            let x = DVector::from_fn(n, |j, _| {
                let k = rem % pts;
                rem /= pts;
                (center[j] - half + step * k as f64).clamp(-w, w)
            });
            if !feasible(&x) {
                continue;
            }
            let v = obj(&x);
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((x, v));
            }
        }
        let next = best.as_ref()?.0.clone();
        if (&next - &center).amax() <= step {
            half *= 0.7;
        }
        center = next;
    }
    best
}

/// Exact minimizer of a strictly convex QP by enumerating candidate active sets: for every set
/// of at most `n` independent rows, minimize on the affine hull and keep the best feasible point.
pub fn qp_enumeration_oracle(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let (m, n) = a.shape();
    let obj = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + f.dot(x);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u64..(1u64 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if rows.len() > n {
            continue;
        }
        let k = rows.len();
        // [H A_S'; A_S 0] (x, nu) = (-f, b_S)
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&(-f));
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if (a * &x - b).max() > 1e-10 {
            continue;
        }
        let v = obj(&x);
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    best
}

/// The scalar integrator setup: `|x| <= 1`, `|u| <= 0.25`, `eps = 0.2`, terminal `eps = 0.05`.
pub struct Setup {
    pub plant: LtiPlant,
    pub em: EquilibriumMap,
    pub cs: ConstraintSpec,
    pub design: OcpDesign,
}

pub fn scalar(n: usize) -> Setup {
    let plant = scenarios::scalar_integrator();
    let em = plant.equilibrium_basis().unwrap();
    let cs = ConstraintSpec::new(&plant, &em, scenarios::scalar_y(), 0.2).unwrap();
    let design = OcpDesign::new(&plant, &em, &cs, dmatrix![1.0], dmatrix![1.0], n, 0.05).unwrap();
    Setup { plant, em, cs, design }
}

/// Double integrator with constraint box `y`, weights `q I` and `R = 1`, `eps = 0.01`.
pub fn double_integrator(y: HPolyhedron, q: f64, n: usize) -> Setup {
    let plant = scenarios::double_integrator();
    let em = plant.equilibrium_basis().unwrap();
    let cs = ConstraintSpec::new(&plant, &em, y, 0.01).unwrap();
    let design = OcpDesign::new(&plant, &em, &cs, scenarios::identity(2) * q, dmatrix![1.0], n, 0.01).unwrap();
    Setup { plant, em, cs, design }
}

/// Direct feasibility of the horizon-`n` OCP at `(x, v)` for a scalar plant `x+ = x + u`
/// with `|x| <= 1`, `|u| <= 0.25`, by interval reachability.
///
/// The states reachable in `n` admissible steps form `[x - 0.25 n, x + 0.25 n]` clipped to
/// `[-1, 1]` (the terminal slice lies inside `[-1, 1]`, so clipping the last step is harmless).
/// The OCP is feasible iff this interval meets the slice of `T` at `v`.
pub fn scalar_ocp_feasible(terminal: &HPolyhedron, x: f64, v: f64, n: usize) -> bool {
    if n > 0 && x.abs() > 1.0 {
        return false;
    }
    let (lo, hi) = if n == 0 {
        (x, x)
    } else {
        ((x - 0.25 * n as f64).max(-1.0), (x + 0.25 * n as f64).min(1.0))
    };
    // Terminal slice at v: a1 x <= b - a2 v, an interval.
    let (mut tlo, mut thi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..terminal.nrows() {
        let (r, b) = terminal.row(i);
        let rhs = b - r[1] * v;
        if r[0].abs() < 1e-14 {
            if rhs < 0.0 {
                return false;
            }
        } else if r[0] > 0.0 {
            thi = thi.min(rhs / r[0]);
        } else {
            tlo = tlo.max(rhs / r[0]);
        }
    }
    lo.max(tlo) <= hi.min(thi)
}

/// `P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` residual, with a plain LU inverse.
pub fn riccati_residual(p: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let s = r + b.transpose() * p * b;
    let s_inv = s.try_inverse().expect("R + B'PB invertible");
    let rhs = q + a.transpose() * p * a - a.transpose() * p * b * s_inv * b.transpose() * p * a;
    (rhs - p).norm()
}

/// Schur stability via decay of matrix powers: `||M^k|| -> 0`.
pub fn powers_decay(m: &DMatrix<f64>, k: usize) -> f64 {
    let mut p = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        p = &p * m;
    }
    p.norm()
}

/// Uniform samples from a bounded polytope by rejection from its vertex bounding box.
pub fn sample_in(set: &HPolyhedron, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let verts = poly_vertices(set);
    assert!(!verts.is_empty(), "set has no vertices");
    let n = set.dim();
    let lo = DVector::from_fn(n, |j, _| verts.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min));
    let hi = DVector::from_fn(n, |j, _| verts.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max));
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        assert!(tries < 10_000 * count, "rejection sampler starved");
        let x = DVector::from_fn(n, |j, _| rng.gen_range(lo[j]..=hi[j]));
        if set.max_violation(x.as_slice()) <= 0.0 {
            out.push(x);
        }
    }
    out
}

/// One step of the tracking loop `u = u_v - K (x - x_v)` written out from the plant data.
pub fn lqr_tracking_step(s: &Setup, x: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let k = s.design.k();
    let xv = &s.em.gx * v;
    let uv = &s.em.gu * v;
    let u = uv - k * (x - xv);
    let y = &s.plant.c * x + &s.plant.d * &u;
    let xn = &s.plant.a * x + &s.plant.b * &u;
    (xn, y)
}

pub fn join(x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + v.len(), x.iter().chain(v.iter()).copied())
}
