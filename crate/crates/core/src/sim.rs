//! Closed-loop simulation, metrics and invariant audits.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::governor::{project_reference, GovernorError, GovernorProblem, GovernorState};
use crate::mpc::{condense, feasible_set, MpcController, MpcError, OcpDesign};
use crate::plant::{ConstraintSpec, LtiPlant};
use crate::polytope::HPolyhedron;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    /// MPC tracking the target directly.
    Mpc,
    /// MPC with the feasibility governor.
    MpcFg,
    /// LQR law with the command governor on the terminal set.
    Cg,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Mpc => "mpc",
            ControllerKind::MpcFg => "mpc_fg",
            ControllerKind::Cg => "cg",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("step {step}: {cause}")]
    Mpc { step: usize, cause: MpcError },
    #[error("step {step}: {cause}")]
    Governor { step: usize, cause: GovernorError },
    #[error(transparent)]
    Setup(#[from] MpcError),
    #[error(transparent)]
    GovernorSetup(#[from] GovernorError),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: LtiPlant,
    pub constraints: ConstraintSpec,
    pub design: OcpDesign,
    pub kind: ControllerKind,
    pub x0: DVector<f64>,
    pub r: DVector<f64>,
    pub steps: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps == 0 {
            return Err(SimError::Scenario("step budget must be at least 1".into()));
        }
        if self.x0.len() != self.plant.nx() {
            return Err(SimError::Scenario(format!(
                "x0 has {} entries, plant has nx = {}",
                self.x0.len(),
                self.plant.nx()
            )));
        }
        if self.r.len() != self.design.em.nv() {
            return Err(SimError::Scenario(format!(
                "r has {} entries, reference dimension is {}",
                self.r.len(),
                self.design.em.nv()
            )));
        }
        Ok(())
    }
}

/// Online objects for one controller kind.
#[derive(Debug, Clone)]
pub struct Controller {
    pub kind: ControllerKind,
    pub mpc: Option<MpcController>,
    pub governor: Option<GovernorProblem>,
    /// Set the audit checks `(x_k, v_k)` against: `Lambda` when governed, else `Gamma_N`
    /// (or `T` for the LQR loop) when it was computed.
    pub audit_set: Option<HPolyhedron>,
    k: DMatrix<f64>,
}

impl Controller {
    /// Builds the controller. `gamma` is a precomputed `Gamma_N`; it is computed here when the
    /// feasibility governor needs it and none is given.
    pub fn build(sc: &Scenario, gamma: Option<HPolyhedron>) -> Result<Self, SimError> {
        sc.validate()?;
        let nx = sc.plant.nx();
        let r_eps = sc.constraints.r_eps.clone();
        let (mpc, governor, audit_set) = match sc.kind {
            ControllerKind::Mpc => {
                let qp = condense(&sc.plant, &sc.design)?;
                (Some(MpcController::new(qp)?), None, gamma)
            }
            ControllerKind::MpcFg => {
                let qp = condense(&sc.plant, &sc.design)?;
                let gamma = match gamma {
                    Some(g) => g,
                    None => feasible_set(&qp, &sc.design.terminal)?,
                };
                let gp = GovernorProblem::new(gamma, r_eps, nx)?;
                let lam = gp.lambda.clone();
                (Some(MpcController::new(qp)?), Some(gp), Some(lam))
            }
            ControllerKind::Cg => {
                let gp = GovernorProblem::command_governor(&sc.design.terminal, r_eps)?;
                let lam = gp.lambda.clone();
                (None, Some(gp), Some(lam))
            }
        };
        Ok(Self {
            kind: sc.kind,
            mpc,
            governor,
            audit_set,
            k: sc.design.k().clone(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// `||v_k - r||^2`.
    pub lyap: Vec<f64>,
    pub t_fg: Vec<Duration>,
    pub t_mpc: Vec<Duration>,
    /// State after the last logged step.
    pub x_final: DVector<f64>,
    pub r: DVector<f64>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Same trajectory, ignoring timing fields.
    pub fn same_path(&self, other: &Self) -> bool {
        self.x == other.x
            && self.u == other.u
            && self.y == other.y
            && self.z == other.z
            && self.v == other.v
            && self.x_final == other.x_final
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k");
        let groups: [(&str, &Vec<DVector<f64>>); 5] =
            [("x", &self.x), ("u", &self.u), ("y", &self.y), ("z", &self.z), ("v", &self.v)];
        for (name, data) in groups {
            let width = data.first().map_or(0, |d| d.len());
            for i in 0..width {
                let _ = write!(s, ",{name}{i}");
            }
        }
        s.push_str(",V,t_fg_us,t_mpc_us\n");
        for k in 0..self.len() {
            let _ = write!(s, "{k}");
            for (_, data) in groups {
                for val in data[k].iter() {
                    let _ = write!(s, ",{val}");
                }
            }
            let _ = writeln!(
                s,
                ",{},{:.3},{:.3}",
                self.lyap[k],
                self.t_fg[k].as_secs_f64() * 1e6,
                self.t_mpc[k].as_secs_f64() * 1e6
            );
        }
        s
    }
}

/// Simulate `steps` steps. Any infeasible solve aborts with the step index.
pub fn run_closed_loop(sc: &Scenario, ctl: &Controller) -> Result<TrajectoryLog, SimError> {
    sc.validate()?;
    let plant = &sc.plant;
    let em = &sc.design.em;
    let mut log = TrajectoryLog {
        r: sc.r.clone(),
        ..Default::default()
    };
    let mut x = sc.x0.clone();
    let mut gov = GovernorState::default();
    let mut warm: Vec<usize> = Vec::new();
    for k in 0..sc.steps {
        let (v, t_fg) = match &ctl.governor {
            Some(gp) => {
                let v = gov
                    .step(gp, &x, &sc.r)
                    .map_err(|cause| SimError::Governor { step: k, cause })?;
                (v, gov.last.as_ref().map_or(Duration::ZERO, |i| i.time))
            }
            None => (sc.r.clone(), Duration::ZERO),
        };
        let (u, t_mpc) = match &ctl.mpc {
            Some(mpc) => {
                let (u, info) = mpc
                    .feedback(&x, &v, &warm)
                    .map_err(|cause| SimError::Mpc { step: k, cause })?;
                warm = info.active_set;
                (u, info.time)
            }
            None => {
                let start = Instant::now();
                let u = -&ctl.k * &x + em.input(&v) + &ctl.k * em.state(&v);
                (u, start.elapsed())
            }
        };
        let out = plant.step(&x, &u);
        log.lyap.push((&v - &sc.r).norm_squared());
        log.x.push(x);
        log.u.push(u);
        log.y.push(out.y);
        log.z.push(out.z);
        log.v.push(v);
        log.t_fg.push(t_fg);
        log.t_mpc.push(t_mpc);
        x = out.x_next;
    }
    log.x_final = x;
    Ok(log)
}

/// Runs the loop `repeats` times and keeps the per-step median solve times. The trajectories
/// must coincide across repeats.
pub fn run_closed_loop_timed(
    sc: &Scenario,
    ctl: &Controller,
    repeats: usize,
) -> Result<TrajectoryLog, SimError> {
    let mut runs = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        runs.push(run_closed_loop(sc, ctl)?);
    }
    let mut log = runs[0].clone();
    assert!(runs.iter().all(|r| r.same_path(&log)), "simulation is not deterministic");
    for k in 0..log.len() {
        log.t_fg[k] = median(runs.iter().map(|r| r.t_fg[k]).collect());
        log.t_mpc[k] = median(runs.iter().map(|r| r.t_mpc[k]).collect());
    }
    Ok(log)
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort_unstable();
    v[v.len() / 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeStats {
    pub min: Duration,
    pub mean: Duration,
    pub max: Duration,
}

impl TimeStats {
    pub fn from_samples(s: &[Duration]) -> Self {
        if s.is_empty() {
            return Self::default();
        }
        let total: Duration = s.iter().sum();
        Self {
            min: *s.iter().min().unwrap(),
            mean: total / s.len() as u32,
            max: *s.iter().max().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    /// Steps until `z` first reaches 90% of the change towards `r*`.
    pub rise_time: Option<usize>,
    /// Steps between the 10% and 90% crossings.
    pub rise_time_10_90: Option<usize>,
    pub ts: f64,
    /// First step from which `v_k = r*` holds to the end of the log.
    pub v_convergence: Option<usize>,
    /// Largest positive violation of the output constraints.
    pub max_residual: f64,
    pub fg_time: TimeStats,
    pub mpc_time: TimeStats,
    /// Worst per-step total of governor and MPC solve time.
    pub step_time_max: Duration,
    pub lyapunov_monotone: bool,
    pub final_error: f64,
}

impl Metrics {
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |s| s.to_string());
        let us = |d: Duration| format!("{:.3}", d.as_secs_f64() * 1e6);
        let mut s = String::new();
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "rise_time_steps={}", opt(self.rise_time));
        let _ = writeln!(
            s,
            "rise_time_s={}",
            self.rise_time.map_or("none".into(), |r| format!("{}", r as f64 * self.ts))
        );
        let _ = writeln!(s, "rise_time_10_90_steps={}", opt(self.rise_time_10_90));
        let _ = writeln!(s, "v_convergence_step={}", opt(self.v_convergence));
        let _ = writeln!(s, "max_constraint_residual={:e}", self.max_residual);
        let _ = writeln!(s, "fg_time_min_us={}", us(self.fg_time.min));
        let _ = writeln!(s, "fg_time_mean_us={}", us(self.fg_time.mean));
        let _ = writeln!(s, "fg_time_max_us={}", us(self.fg_time.max));
        let _ = writeln!(s, "mpc_time_min_us={}", us(self.mpc_time.min));
        let _ = writeln!(s, "mpc_time_mean_us={}", us(self.mpc_time.mean));
        let _ = writeln!(s, "mpc_time_max_us={}", us(self.mpc_time.max));
        let _ = writeln!(s, "step_time_max_us={}", us(self.step_time_max));
        let _ = writeln!(s, "lyapunov_monotone={}", self.lyapunov_monotone);
        let _ = writeln!(s, "final_state_error={:e}", self.final_error);
        s
    }
}

pub const V_TOL: f64 = 1e-8;
pub const LYAP_TOL: f64 = 1e-9;

/// First index at which the fraction of the `z` transition reaches `level`.
fn crossing(log: &TrajectoryLog, target: &DVector<f64>, level: f64) -> Option<usize> {
    let z0 = log.z.first()?;
    let delta = target - z0;
    let dd = delta.norm_squared();
    // Already at the target: no transition to measure.
    if delta.amax() <= V_TOL {
        return Some(0);
    }
    log.z
        .iter()
        .position(|z| (z - z0).dot(&delta) / dd >= level)
}

pub fn metrics(log: &TrajectoryLog, r_star: &DVector<f64>, y: &HPolyhedron, ts: f64, x_star: &DVector<f64>) -> Metrics {
    let rise_time = crossing(log, r_star, 0.9);
    let rise_time_10_90 = match (crossing(log, r_star, 0.1), rise_time) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let max_residual = log
        .y
        .iter()
        .map(|yk| y.max_violation(yk.as_slice()).max(0.0))
        .fold(0.0, f64::max);
    let step_time_max = log
        .t_fg
        .iter()
        .zip(&log.t_mpc)
        .map(|(a, b)| *a + *b)
        .max()
        .unwrap_or_default();
    Metrics {
        steps: log.len(),
        rise_time,
        rise_time_10_90,
        ts,
        v_convergence: v_convergence(log, r_star),
        max_residual,
        fg_time: TimeStats::from_samples(&log.t_fg),
        mpc_time: TimeStats::from_samples(&log.t_mpc),
        step_time_max,
        lyapunov_monotone: first_lyapunov_increase(log).is_none(),
        final_error: (&log.x_final - x_star).norm(),
    }
}

fn v_convergence(log: &TrajectoryLog, r_star: &DVector<f64>) -> Option<usize> {
    let mut t = None;
    for (k, v) in log.v.iter().enumerate().rev() {
        if (v - r_star).amax() <= V_TOL {
            t = Some(k);
        } else {
            break;
        }
    }
    t
}

fn first_lyapunov_increase(log: &TrajectoryLog) -> Option<usize> {
    log.lyap
        .windows(2)
        .position(|w| w[1] > w[0] + LYAP_TOL)
        .map(|k| k + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    pub first_failure: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct AuditTolerances {
    pub set: f64,
    pub output: f64,
    pub state: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            set: 1e-8,
            output: 1e-8,
            state: 1e-3,
        }
    }
}

/// Verdicts: (a) `(x_k, v_k)` in `set` for all `k`; (b) `y_k` in `Y`; (c) `V` non-increasing;
/// (d) `v` settles on `r*` and stays bitwise constant; (e) final state near `x_bar(r*)`.
/// With `set = None`, verdict (a) is skipped and reported as passing.
pub fn audit_invariants(
    log: &TrajectoryLog,
    set: Option<&HPolyhedron>,
    y: &HPolyhedron,
    r_star: &DVector<f64>,
    x_star: &DVector<f64>,
    tol: &AuditTolerances,
) -> Vec<Verdict> {
    let verdict = |name, first: Option<usize>| Verdict {
        name,
        pass: first.is_none(),
        first_failure: first,
    };
    let a = set.and_then(|s| {
        (0..log.len()).find(|&k| {
            let w: Vec<f64> = log.x[k].iter().chain(log.v[k].iter()).copied().collect();
            !s.contains_point(&w, tol.set)
        })
    });
    let b = (0..log.len()).find(|&k| !y.contains_point(log.y[k].as_slice(), tol.output));
    let c = first_lyapunov_increase(log);
    let d = match v_convergence(log, r_star) {
        None => Some(log.len().saturating_sub(1)),
        Some(t) => (t + 1..log.len()).find(|&k| log.v[k] != log.v[t]),
    };
    let e = ((&log.x_final - x_star).norm() > tol.state).then_some(log.len());
    vec![
        verdict("lambda_membership", a),
        verdict("output_admissible", b),
        verdict("lyapunov_monotone", c),
        verdict("reference_settles", d),
        verdict("state_converges", e),
    ]
}

/// Simulate a whole scenario: build the controller, run, measure, audit.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub log: TrajectoryLog,
    pub metrics: Metrics,
    pub verdicts: Vec<Verdict>,
    pub r_star: DVector<f64>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

pub fn simulate(
    sc: &Scenario,
    ctl: &Controller,
    repeats: usize,
    tol: &AuditTolerances,
) -> Result<RunReport, SimError> {
    let log = run_closed_loop_timed(sc, ctl, repeats)?;
    let r_star = project_reference(&sc.constraints.r_eps, &sc.r)?;
    let x_star = sc.design.em.state(&r_star);
    let m = metrics(&log, &r_star, &sc.constraints.y, sc.plant.ts, &x_star);
    let verdicts = audit_invariants(&log, ctl.audit_set.as_ref(), &sc.constraints.y, &r_star, &x_star, tol);
    Ok(RunReport {
        log,
        metrics: m,
        verdicts,
        r_star,
    })
}
