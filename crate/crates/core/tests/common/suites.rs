//! Property suites shared by the per-area tests and the acceptance run. Each returns a short
//! summary on success and the first counterexample on failure.

use fgmpc::governor::{project_reference, GovernorProblem};
use fgmpc::mpc::{condense, feasible_set};
use fgmpc::polytope::HPolyhedron;
use fgmpc::sim::{audit_invariants, run_closed_loop, AuditTolerances, Controller, ControllerKind, Scenario};
use fgmpc::solver::{solve_lp, solve_qp, LpProblem, QpProblem};
use nalgebra::{dvector, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

/// Randomized governed runs of the scalar integrator from states in the governed ROA towards
/// arbitrary targets: every step stays in `Lambda` with admissible outputs, `V` never increases,
/// and `v` settles on `r*` exactly.
pub fn governed_scalar_runs(runs: usize, seed: u64) -> Result<String, String> {
    let s = scalar(2);
    let g = feasible_set(&condense(&s.plant, &s.design).unwrap(), &s.design.terminal).unwrap();
    let gp = GovernorProblem::new(g.clone(), s.cs.r_eps.clone(), 1).unwrap();
    let roa = gp.roa().unwrap();
    let mut rng = rng(seed);
    let base = Scenario {
        plant: s.plant.clone(),
        constraints: s.cs.clone(),
        design: s.design.clone(),
        kind: ControllerKind::MpcFg,
        x0: dvector![0.0],
        r: dvector![0.0],
        steps: 60,
    };
    let ctl = Controller::build(&base, Some(g)).unwrap();
    let mut settle_max = 0;
    for run in 0..runs {
        let x0 = sample_in(&roa, 1, &mut rng).remove(0);
        let r = dvector![rng.gen_range(-2.0..2.0)];
        let sc = Scenario {
            x0: x0.clone(),
            r: r.clone(),
            ..base.clone()
        };
        let log = run_closed_loop(&sc, &ctl).map_err(|e| format!("run {run}: {e}"))?;
        let r_star = project_reference(&s.cs.r_eps, &r).unwrap();
        for k in 0..log.len() {
            let w = join(&log.x[k], &log.v[k]);
            ensure!(gp.lambda.max_violation(w.as_slice()) <= 1e-8, "run {run} step {k}: (x, v) left Lambda");
            ensure!(s.cs.y.max_violation(log.y[k].as_slice()) <= 1e-8, "run {run} step {k}: output violates Y");
            let y = &s.plant.c * &log.x[k] + &s.plant.d * &log.u[k];
            ensure!((&y - &log.y[k]).amax() < 1e-12, "run {run} step {k}: logged output is stale");
            let next = &s.plant.a * &log.x[k] + &s.plant.b * &log.u[k];
            let logged = if k + 1 < log.len() { &log.x[k + 1] } else { &log.x_final };
            ensure!((&next - logged).amax() < 1e-12, "run {run} step {k}: state update differs");
            let vk = (&log.v[k] - &r).norm_squared();
            ensure!((vk - log.lyap[k]).abs() < 1e-12, "run {run} step {k}: logged V is stale");
            if k > 0 {
                ensure!(log.lyap[k] <= log.lyap[k - 1] + 1e-9, "run {run} step {k}: V increased");
            }
        }
        let t = (0..log.len())
            .find(|&k| log.v[k..].iter().all(|v| (v - &r_star).amax() <= 1e-8))
            .ok_or_else(|| format!("run {run}: v never settles on r* = {}", r_star[0]))?;
        ensure!(log.v[t..].iter().all(|v| v == &log.v[t]), "run {run}: v moves after settling");
        settle_max = settle_max.max(t);
        let x_star = &s.em.gx * &r_star;
        let verdicts = audit_invariants(&log, Some(&gp.lambda), &s.cs.y, &r_star, &x_star, &AuditTolerances::default());
        ensure!(verdicts.iter().all(|v| v.pass), "run {run}: {verdicts:?}");
    }
    Ok(format!("{runs} runs, latest settling step {settle_max}"))
}

/// One-step invariance and output admissibility of the terminal set on uniform samples.
pub fn terminal_set_audit(name: &str, s: &Setup, samples: usize, seed: u64) -> Result<String, String> {
    let t = &s.design.terminal.set;
    let nx = s.plant.nx();
    let mut rng = rng(seed);
    for w in sample_in(t, samples, &mut rng) {
        let x = w.rows(0, nx).into_owned();
        let v = w.rows(nx, w.len() - nx).into_owned();
        let (xn, y) = lqr_tracking_step(s, &x, &v);
        ensure!(s.cs.y.max_violation(y.as_slice()) <= 1e-9, "{name}: inadmissible output from {:?}", w.as_slice());
        ensure!(t.max_violation(join(&xn, &v).as_slice()) <= 1e-9, "{name}: successor leaves T from {:?}", w.as_slice());
    }
    Ok(format!("{name}: {samples} samples, {} rows", t.nrows()))
}

/// Riccati residual and closed-loop stability of a design.
pub fn riccati_audit(name: &str, s: &Setup) -> Result<String, String> {
    let (a, b) = (&s.plant.a, &s.plant.b);
    let res = riccati_residual(s.design.p(), a, b, &s.design.q, &s.design.r);
    ensure!(res <= 1e-8, "{name}: Riccati residual {res:e}");
    let decay = powers_decay(&(a - b * s.design.k()), 2000);
    ensure!(decay < 1e-6, "{name}: closed loop not Schur stable");
    Ok(format!("{name}: residual {res:.1e}"))
}

/// Projection against vertex enumeration on random polytopes of dimension 2 to 4.
pub fn projection_oracle(cases: usize, seed: u64) -> Result<String, String> {
    let mut rng = rng(seed);
    for case in 0..cases {
        let n = rng.gen_range(2..=4);
        let extra = rng.gen_range(1..=6);
        let (a, b) = random_polytope(&mut rng, n, extra);
        let p = HPolyhedron::new(a.clone(), b.clone()).unwrap();
        let k = rng.gen_range(1..n);
        let mut coords: Vec<usize> = (0..n).collect();
        coords.shuffle(&mut rng);
        let keep: Vec<usize> = coords[..k].to_vec();
        let proj = p.project(&keep).map_err(|e| format!("case {case}: {e}"))?;
        let shadow: Vec<DVector<f64>> = vertices(&a, &b)
            .iter()
            .map(|v| DVector::from_iterator(k, keep.iter().map(|&j| v[j])))
            .collect();
        let proj_verts = poly_vertices(&proj);
        ensure!(!proj_verts.is_empty(), "case {case}: projection has no vertices");
        let mut dirs: Vec<DVector<f64>> = (0..proj.nrows()).map(|i| DVector::from_vec(proj.row(i).0)).collect();
        dirs.extend((0..64).map(|_| random_unit(&mut rng, k)));
        same_support(&proj_verts, &shadow, &dirs, 1e-7).map_err(|e| format!("case {case}: {e}"))?;
        for i in 0..proj.nrows() {
            let (r, bi) = proj.row(i);
            let h = max_dot(&shadow, &DVector::from_vec(r));
            ensure!((h - bi).abs() < 1e-7, "case {case}: row {i} is not a supporting facet");
        }
    }
    Ok(format!("{cases} polytopes"))
}

fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.2
}

/// KKT residuals of random QPs and strong duality of random LPs.
pub fn solver_certificates(cases: usize, seed: u64) -> Result<String, String> {
    let mut rng = rng(seed);
    for case in 0..cases {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=12);
        let h = random_spd(&mut rng, n);
        let f = DVector::from_fn(n, |_, _| rng.gen_range(-6.0..6.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(0.1..1.0));
        let s = solve_qp(&QpProblem::new(h.clone(), f.clone(), a.clone(), b.clone()).unwrap()).unwrap();
        ensure!(s.is_optimal(), "QP case {case}: {:?}", s.status);
        let x = s.x.unwrap();
        let lam = s.multipliers.unwrap();
        let slack = &b - &a * &x;
        let stat = (&h * &x + &f + a.transpose() * &lam).norm();
        ensure!(stat <= 1e-6, "QP case {case}: stationarity {stat:e}");
        ensure!(slack.min() >= -1e-8, "QP case {case}: primal residual {:e}", -slack.min());
        ensure!(lam.min() >= -1e-8, "QP case {case}: negative multiplier");
        let comp = lam.iter().zip(slack.iter()).map(|(l, s)| (l * s).abs()).fold(0.0, f64::max);
        ensure!(comp <= 1e-8, "QP case {case}: complementarity {comp:e}");
    }
    for case in 0..cases {
        let n = rng.gen_range(1..=5);
        let extra = rng.gen_range(0..8);
        let (a, b) = random_polytope(&mut rng, n, extra);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let s = solve_lp(&LpProblem::new(c.clone(), a.clone(), b.clone()).unwrap());
        ensure!(s.is_optimal(), "LP case {case}: {:?}", s.status);
        let best = max_dot(&vertices(&a, &b), &c);
        ensure!((s.value - best).abs() < 1e-8, "LP case {case}: value {} vs vertex optimum {best}", s.value);
        let y = s.multipliers.unwrap();
        ensure!(y.min() >= -1e-9, "LP case {case}: negative dual");
        ensure!((a.transpose() * &y - &c).amax() < 1e-8, "LP case {case}: dual infeasible");
        ensure!((b.dot(&y) - s.value).abs() < 1e-6, "LP case {case}: duality gap");
    }
    Ok(format!("{cases} QPs, {cases} LPs"))
}
