use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use fgmpc::governor::GovernorProblem;
use fgmpc::mpc::{condense, feasible_set, n_star};
use fgmpc::polytope::HPolyhedron;
use fgmpc::sim::{simulate, AuditTolerances, Controller, ControllerKind, RunReport};
use fgmpc::DVector;

use crate::config::{Config, Problem};
use crate::output::{names, write_atomic, write_hrep};

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    AuditFailed,
}

/// Failure classes, mapped to distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

pub struct Ctx {
    pub config: Config,
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub tol: Option<f64>,
    pub cap: Option<usize>,
    pub quiet: bool,
}

impl Ctx {
    fn problem(&self) -> Result<Problem, Failure> {
        self.config.problem(&self.base_dir).map_err(Failure::Config)
    }

    fn say(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }

    fn tolerances(&self) -> AuditTolerances {
        let mut t = AuditTolerances::default();
        if let Some(tol) = self.tol {
            t.set = tol;
            t.output = tol;
        }
        if let Some(s) = self.config.state_tolerance {
            t.state = s;
        }
        t
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

pub fn sets(ctx: &Ctx) -> Result<Outcome, Failure> {
    let p = ctx.problem()?;
    let (nx, nv) = (p.plant.nx(), p.em.nv());
    let qp = condense(&p.plant, &p.design).map_err(runtime)?;
    let gamma = feasible_set(&qp, &p.design.terminal).map_err(runtime)?;
    let gp = GovernorProblem::new(gamma.clone(), p.constraints.r_eps.clone(), nx).map_err(runtime)?;
    let roa = gp.roa().map_err(runtime)?;

    let xv: Vec<String> = names("x", nx).into_iter().chain(names("v", nv)).collect();
    let out = &ctx.out;
    let io = |r: Result<()>| r.map_err(Failure::Runtime);
    io(write_hrep(&out.join("T.hrep"), &p.design.terminal.set, &xv))?;
    io(write_hrep(&out.join("GammaN.hrep"), &gamma, &xv))?;
    io(write_hrep(&out.join("Lambda.hrep"), &gp.lambda, &xv))?;
    io(write_hrep(&out.join("Reps.hrep"), &p.constraints.r_eps, &names("v", nv)))?;
    io(write_hrep(&out.join("RoaFG.hrep"), &roa, &names("x", nx)))?;

    let named: [(&str, &HPolyhedron); 3] = [("T", &p.design.terminal.set), ("GammaN", &gamma), ("Lambda", &gp.lambda)];
    if nx + nv == 2 {
        let mut csv = format!("set,{}\n", xv.join(","));
        for (name, set) in named {
            for [a, b] in closed(set.polygon_vertices()) {
                let _ = writeln!(csv, "{name},{a},{b}");
            }
        }
        io(write_atomic(&out.join("polygons.csv"), &csv))?;
    }
    if nx == 2 {
        let mut slices = ctx.config.slices.clone();
        if slices.is_empty() {
            slices.push(vec![0.0; nv]);
            if let Some(r) = &p.r {
                slices.push(r.iter().copied().collect());
            }
        }
        let vcols = names("v", nv).join(",");
        let mut csv = format!("set,slice,{vcols},x0,x1\n");
        let idx: Vec<usize> = (nx..nx + nv).collect();
        for (si, v) in slices.iter().enumerate() {
            let vs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            for (name, set) in named {
                let s = set.slice(&idx, v).map_err(runtime)?;
                for [a, b] in closed(s.polygon_vertices()) {
                    let _ = writeln!(csv, "{name},{si},{},{a},{b}", vs.join(","));
                }
            }
        }
        io(write_atomic(&out.join("slices.csv"), &csv))?;
        let mut csv = String::from("x0,x1\n");
        for [a, b] in closed(roa.polygon_vertices()) {
            let _ = writeln!(csv, "{a},{b}");
        }
        io(write_atomic(&out.join("roa.csv"), &csv))?;
    }
    ctx.say(format!(
        "T: {} rows (t* = {}); GammaN (N = {}): {} rows; Lambda: {} rows; R_eps: {} rows; ROA: {} rows",
        p.design.terminal.set.nrows(),
        p.design.terminal.t_star,
        p.design.n,
        gamma.nrows(),
        gp.lambda.nrows(),
        p.constraints.r_eps.nrows(),
        roa.nrows()
    ));
    ctx.say(format!("wrote sets to {}", out.display()));
    Ok(Outcome::Pass)
}

fn closed(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if let Some(&first) = v.first() {
        v.push(first);
    }
    v
}

fn report_text(name: &str, kind: ControllerKind, n: usize, rep: &RunReport) -> String {
    let mut s = format!("controller={name}\nkind={}\nN={n}\n", kind.name());
    let rs: Vec<String> = rep.r_star.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "r_star={}", rs.join(","));
    s.push_str(&rep.metrics.to_kv());
    for v in &rep.verdicts {
        let _ = writeln!(
            s,
            "audit_{}={}{}",
            v.name,
            if v.pass { "pass" } else { "fail" },
            v.first_failure.map_or(String::new(), |k| format!(" at {k}"))
        );
    }
    let _ = writeln!(s, "audits_pass={}", rep.all_pass());
    s
}

pub fn simulate_cmd(ctx: &Ctx) -> Result<Outcome, Failure> {
    let p = ctx.problem()?;
    let kind: ControllerKind = ctx.config.controller.into();
    let sc = p
        .scenario(kind, p.design.n, ctx.config.steps)
        .map_err(Failure::Config)?;
    let ctl = Controller::build(&sc, None).map_err(runtime)?;
    let rep = simulate(&sc, &ctl, ctx.config.repeats, &ctx.tolerances()).map_err(runtime)?;
    write_atomic(&ctx.out.join("trajectory.csv"), &rep.log.to_csv()).map_err(Failure::Runtime)?;
    let text = report_text(kind.name(), kind, p.design.n, &rep);
    write_atomic(&ctx.out.join("metrics.txt"), &text).map_err(Failure::Runtime)?;
    ctx.say(text.trim_end());
    Ok(if rep.all_pass() { Outcome::Pass } else { Outcome::AuditFailed })
}

struct Variant {
    name: String,
    kind: ControllerKind,
    n: usize,
}

pub fn compare(ctx: &Ctx) -> Result<Outcome, Failure> {
    let p = ctx.problem()?;
    if ctx.config.controllers.len() < 2 {
        return Err(Failure::Config(anyhow!(
            "config field `controllers`: compare needs at least two entries"
        )));
    }
    let mut variants: Vec<Variant> = Vec::new();
    for c in &ctx.config.controllers {
        let kind: ControllerKind = c.kind.into();
        let n = c.n.unwrap_or(p.design.n);
        let base = c.name.clone().unwrap_or_else(|| match kind {
            ControllerKind::Cg => "cg".to_string(),
            _ => format!("{}_N{n}", kind.name()),
        });
        let mut name = base.clone();
        let mut i = 2;
        while variants.iter().any(|v| v.name == name) {
            name = format!("{base}_{i}");
            i += 1;
        }
        variants.push(Variant { name, kind, n });
    }
    let scenarios = variants
        .iter()
        .map(|v| p.scenario(v.kind, v.n, ctx.config.steps))
        .collect::<Result<Vec<_>>>()
        .map_err(Failure::Config)?;
    let tol = ctx.tolerances();
    let repeats = ctx.config.repeats;
    let results: Vec<Result<RunReport, String>> = fgmpc::par::map(&scenarios, |sc| {
        let ctl = Controller::build(sc, None).map_err(|e| e.to_string())?;
        simulate(sc, &ctl, repeats, &tol).map_err(|e| e.to_string())
    });

    let us = |d: std::time::Duration| format!("{:.3}", d.as_secs_f64() * 1e6);
    let mut table = String::from(
        "controller,kind,N,status,rise_time_steps,rise_time_s,rise_time_10_90_steps,v_convergence_step,\
         fg_tave_us,fg_tmax_us,mpc_tave_us,mpc_tmax_us,step_tmax_us,max_residual,audits\n",
    );
    let mut all_ok = true;
    for (v, res) in variants.iter().zip(&results) {
        match res {
            Ok(rep) => {
                let m = &rep.metrics;
                let opt = |x: Option<usize>| x.map_or("none".to_string(), |s| s.to_string());
                let _ = writeln!(
                    table,
                    "{},{},{},ok,{},{},{},{},{},{},{},{},{},{:e},{}",
                    v.name,
                    v.kind.name(),
                    v.n,
                    opt(m.rise_time),
                    m.rise_time.map_or("none".into(), |r| format!("{}", r as f64 * m.ts)),
                    opt(m.rise_time_10_90),
                    opt(m.v_convergence),
                    us(m.fg_time.mean),
                    us(m.fg_time.max),
                    us(m.mpc_time.mean),
                    us(m.mpc_time.max),
                    us(m.step_time_max),
                    m.max_residual,
                    if rep.all_pass() { "pass" } else { "fail" }
                );
                all_ok &= rep.all_pass();
                let dir = &ctx.out;
                write_atomic(&dir.join(format!("trajectory_{}.csv", v.name)), &rep.log.to_csv())
                    .map_err(Failure::Runtime)?;
                write_atomic(
                    &dir.join(format!("metrics_{}.txt", v.name)),
                    &report_text(&v.name, v.kind, v.n, rep),
                )
                .map_err(Failure::Runtime)?;
            }
            Err(e) => {
                all_ok = false;
                let msg = e.replace(',', ";");
                let _ = writeln!(table, "{},{},{},error: {msg},,,,,,,,,,,", v.name, v.kind.name(), v.n);
            }
        }
    }
    write_atomic(&ctx.out.join("comparison.csv"), &table).map_err(Failure::Runtime)?;

    // Plot bundle: z and v of every successful run, one column per controller.
    let ok: Vec<(&Variant, &RunReport)> = variants
        .iter()
        .zip(&results)
        .filter_map(|(v, r)| r.as_ref().ok().map(|r| (v, r)))
        .collect();
    let mut plot = String::from("k");
    for (v, r) in &ok {
        for i in 0..r.log.z.first().map_or(0, |z| z.len()) {
            let _ = write!(plot, ",z{i}_{0},v{i}_{0}", v.name);
        }
    }
    plot.push('\n');
    let len = ok.iter().map(|(_, r)| r.log.len()).max().unwrap_or(0);
    for k in 0..len {
        let _ = write!(plot, "{k}");
        for (_, r) in &ok {
            for i in 0..r.log.z.first().map_or(0, |z| z.len()) {
                match (r.log.z.get(k), r.log.v.get(k)) {
                    (Some(z), Some(v)) => {
                        let _ = write!(plot, ",{},{}", z[i], v[i]);
                    }
                    _ => plot.push_str(",,"),
                }
            }
        }
        plot.push('\n');
    }
    write_atomic(&ctx.out.join("plot.csv"), &plot).map_err(Failure::Runtime)?;
    ctx.say(table.trim_end());
    for (v, res) in variants.iter().zip(&results) {
        if let Err(e) = res {
            eprintln!("{}: {e}", v.name);
        }
    }
    Ok(if all_ok { Outcome::Pass } else { Outcome::AuditFailed })
}

pub fn nstar(ctx: &Ctx) -> Result<Outcome, Failure> {
    let p = ctx.problem()?;
    let x0 = p.x0.clone().ok_or_else(|| Failure::Config(anyhow!("config field `x0` is required")))?;
    let r: DVector<f64> = p.r.clone().ok_or_else(|| Failure::Config(anyhow!("config field `r` is required")))?;
    let cap = ctx.cap.or(ctx.config.nstar_cap).unwrap_or(1000);
    if cap == 0 {
        return Err(Failure::Config(anyhow!("--cap must be at least 1")));
    }
    let rep = n_star(&p.plant, &p.design, &x0, &r, cap).map_err(runtime)?;
    if !ctx.quiet {
        for (h, f) in &rep.scan {
            println!("horizon={h} feasible={f}");
        }
        if !rep.monotone {
            println!("warning: feasibility not monotone in the horizon");
        }
    }
    println!("n_star={}", rep.n_star);
    Ok(Outcome::Pass)
}

pub fn resolve_out(flag: Option<PathBuf>, config: &Config, base_dir: &Path) -> Result<PathBuf> {
    match (flag, &config.out) {
        (Some(p), _) => Ok(p),
        (None, Some(p)) => Ok(base_dir.join(p)),
        (None, None) => Ok(PathBuf::from("out")),
    }
}
