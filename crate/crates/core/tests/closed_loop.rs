mod common;

use common::*;
use fgmpc::governor::{cg_step, fg_step, project_reference, GovernorProblem};
use fgmpc::mpc::{condense, feasible_set};
use fgmpc::polytope::HPolyhedron;
use fgmpc::scenarios;
use fgmpc::sim::*;
use nalgebra::{dvector, DVector};
use rand::Rng;

fn scenario(s: &Setup, kind: ControllerKind, x0: DVector<f64>, r: DVector<f64>, steps: usize) -> Scenario {
    Scenario {
        plant: s.plant.clone(),
        constraints: s.cs.clone(),
        design: s.design.clone(),
        kind,
        x0,
        r,
        steps,
    }
}

fn gamma(s: &Setup) -> HPolyhedron {
    feasible_set(&condense(&s.plant, &s.design).unwrap(), &s.design.terminal).unwrap()
}

/// Checks a log against the plant equations and the constraint set, independently of the audit.
fn replay(s: &Setup, log: &TrajectoryLog) {
    for k in 0..log.len() {
        let y = &s.plant.c * &log.x[k] + &s.plant.d * &log.u[k];
        assert!((&y - &log.y[k]).amax() < 1e-12, "step {k}: logged output differs");
        let z = &s.plant.e * &log.x[k] + &s.plant.f * &log.u[k];
        assert!((&z - &log.z[k]).amax() < 1e-12, "step {k}: logged tracking output differs");
        let next = &s.plant.a * &log.x[k] + &s.plant.b * &log.u[k];
        let logged = if k + 1 < log.len() { &log.x[k + 1] } else { &log.x_final };
        assert!((&next - logged).amax() < 1e-12, "step {k}: state update differs");
    }
}

#[test]
fn randomized_governed_runs_keep_every_guarantee() {
    common::suites::governed_scalar_runs(50, 41).unwrap();
}

#[test]
fn governor_matches_slice_grid_search() {
    let s = double_integrator(scenarios::y1(), 1.0, 10);
    let gp = GovernorProblem::new(gamma(&s), s.cs.r_eps.clone(), 2).unwrap();
    let x = dvector![-1.0, 0.0];
    let r = dvector![0.75];
    let v = fg_step(&gp, &x, &r).unwrap();
    // Closest admissible v on a fine grid of the slice.
    let best = (0..=400_000)
        .map(|i| -1.0 + 2.0 * i as f64 / 400_000.0)
        .filter(|&v| gp.lambda.max_violation(&[x[0], x[1], v]) <= 0.0)
        .min_by(|a, b| (a - 0.75).abs().total_cmp(&(b - 0.75).abs()))
        .unwrap();
    assert!((v[0] - best).abs() <= 1e-5, "{} vs grid {best}", v[0]);
    assert!((v[0] - 0.75).abs() > 1e-3, "the target is not reachable in one shot");
    // Idempotent.
    assert_eq!(fg_step(&gp, &x, &r).unwrap(), v);

    // At the equilibrium of the projected reference the governor returns r* exactly.
    let far = dvector![3.0];
    let r_star = project_reference(&s.cs.r_eps, &far).unwrap();
    let grid_star = (0..=200_000)
        .map(|i| -1.0 + 2.0 * i as f64 / 200_000.0)
        .filter(|&v| s.cs.r_eps.max_violation(&[v]) <= 0.0)
        .min_by(|a, b| (a - 3.0).abs().total_cmp(&(b - 3.0).abs()))
        .unwrap();
    assert!((r_star[0] - grid_star).abs() <= 1e-5);
    let v = fg_step(&gp, &(&s.em.gx * &r_star), &far).unwrap();
    assert!((&v - &r_star).amax() <= 1e-8);
}

#[test]
fn command_governor_is_never_closer_than_feasibility_governor() {
    let s = scalar(2);
    let gp = GovernorProblem::new(gamma(&s), s.cs.r_eps.clone(), 1).unwrap();
    let cg = GovernorProblem::command_governor(&s.design.terminal, s.cs.r_eps.clone()).unwrap();
    let cg_roa = cg.roa().unwrap();
    let mut rng = rng(42);
    for x in sample_in(&cg_roa, 300, &mut rng) {
        let r = dvector![rng.gen_range(-2.0..2.0)];
        let vf = fg_step(&gp, &x, &r).unwrap();
        let vc = cg_step(&s.design.terminal, &s.cs.r_eps, &x, &r).unwrap();
        assert!((&vc - &r).norm() >= (&vf - &r).norm() - 1e-9, "x = {x:?}, r = {r:?}");
    }
}

#[test]
fn governed_roa_strictly_contains_each_slice() {
    let s = scalar(2);
    let g = gamma(&s);
    let gp = GovernorProblem::new(g.clone(), s.cs.r_eps.clone(), 1).unwrap();
    let roa = gp.roa().unwrap();
    for v in [-0.8, -0.4, 0.0, 0.4, 0.8] {
        let slice = g.slice(&[1], &[v]).unwrap();
        assert!(roa.contains_set(&slice), "v = {v}");
        assert!(!slice.contains_set(&roa), "v = {v}");
    }
}

#[test]
fn plain_mpc_satisfies_the_fixed_reference_guarantees() {
    let s = double_integrator(scenarios::y1(), 1.0, 10);
    let g = gamma(&s);
    let r = dvector![0.5];
    let x0 = dvector![0.0, 0.0];
    assert!(g.contains_point(join(&x0, &r).as_slice(), 0.0));
    let sc = scenario(&s, ControllerKind::Mpc, x0, r.clone(), 400);
    let ctl = Controller::build(&sc, Some(g.clone())).unwrap();
    let report = simulate(&sc, &ctl, 1, &AuditTolerances::default()).unwrap();
    replay(&s, &report.log);
    for name in ["lambda_membership", "output_admissible", "state_converges"] {
        let v = report.verdicts.iter().find(|v| v.name == name).unwrap();
        assert!(v.pass, "{name}: {v:?}");
    }
    assert!(report.log.v.iter().all(|v| v == &r));
}

#[test]
fn runs_are_deterministic() {
    let s = scalar(2);
    let sc = scenario(&s, ControllerKind::MpcFg, dvector![-0.9], dvector![0.7], 40);
    let ctl = Controller::build(&sc, None).unwrap();
    let a = run_closed_loop(&sc, &ctl).unwrap();
    let b = run_closed_loop(&sc, &ctl).unwrap();
    assert!(a.same_path(&b));
    let c = run_closed_loop(&sc, &Controller::build(&sc, None).unwrap()).unwrap();
    assert!(a.same_path(&c));
}

#[test]
fn audit_flags_injected_faults() {
    let s = scalar(2);
    let sc = scenario(&s, ControllerKind::MpcFg, dvector![-0.9], dvector![0.7], 60);
    let ctl = Controller::build(&sc, None).unwrap();
    let log = run_closed_loop(&sc, &ctl).unwrap();
    let r_star = dvector![0.7];
    let x_star = dvector![0.7];
    let lam = ctl.audit_set.clone().unwrap();
    let tol = AuditTolerances::default();
    assert!(audit_invariants(&log, Some(&lam), &s.cs.y, &r_star, &x_star, &tol).iter().all(|v| v.pass));

    let mut bad = log.clone();
    bad.y[7][1] = 0.3;
    let v = audit_invariants(&bad, Some(&lam), &s.cs.y, &r_star, &x_star, &tol);
    assert_eq!(v[1].name, "output_admissible");
    assert_eq!(v[1].first_failure, Some(7));

    let mut bad = log.clone();
    bad.x[4][0] = 1.5;
    let v = audit_invariants(&bad, Some(&lam), &s.cs.y, &r_star, &x_star, &tol);
    assert_eq!(v[0].first_failure, Some(4));

    let mut bad = log.clone();
    bad.lyap[3] = bad.lyap[2] + 1.0;
    let v = audit_invariants(&bad, Some(&lam), &s.cs.y, &r_star, &x_star, &tol);
    assert_eq!(v[2].first_failure, Some(3));

    let mut bad = log;
    let last = bad.len() - 1;
    bad.v[last][0] += 1e-6;
    let v = audit_invariants(&bad, Some(&lam), &s.cs.y, &r_star, &x_star, &tol);
    assert!(!v[3].pass);
}

#[test]
fn equilibrium_start_is_a_fixed_point() {
    let s = double_integrator(scenarios::y1(), 1.0, 10);
    let r = dvector![0.3];
    let sc = scenario(&s, ControllerKind::MpcFg, &s.em.gx * &r, r.clone(), 20);
    let report = simulate(&sc, &Controller::build(&sc, None).unwrap(), 1, &AuditTolerances::default()).unwrap();
    assert!(report.all_pass());
    assert_eq!(report.metrics.rise_time, Some(0));
    assert_eq!(report.metrics.v_convergence, Some(0));
    assert_eq!(report.metrics.max_residual, 0.0);
    for k in 0..report.log.len() {
        assert!((&report.log.x[k] - &sc.x0).amax() < 1e-12);
        assert_eq!(report.log.v[k], r);
    }
}

#[test]
fn slices_are_entered_in_order_of_distance_from_the_start() {
    let s = double_integrator(scenarios::y1(), 1.0, 10);
    let g = gamma(&s);
    let sc = scenario(&s, ControllerKind::MpcFg, dvector![-1.0, 0.0], dvector![0.75], 400);
    let log = run_closed_loop(&sc, &Controller::build(&sc, Some(g.clone())).unwrap()).unwrap();
    let entry = |v: f64| {
        (0..log.len())
            .find(|&k| g.contains_point(&[log.x[k][0], log.x[k][1], v], 1e-9))
            .unwrap_or(usize::MAX)
    };
    let (a, b, c) = (entry(-0.75), entry(0.0), entry(0.75));
    assert!(a <= b && b <= c, "entry steps {a}, {b}, {c}");
    assert!(c < usize::MAX);
    assert!(c > 0, "the start is outside the target slice");
}
