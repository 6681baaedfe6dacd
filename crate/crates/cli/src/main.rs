//! `fgmpc`: build sets, simulate, compare controllers and search the minimal horizon.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, Failure, Outcome};

/// Exit codes: 0 success, 1 audit or comparison failure, 2 invalid configuration,
/// 3 runtime failure (infeasible problem, state outside the ROA, intractable projection).
#[derive(Debug, Parser)]
#[command(name = "fgmpc", version, about = "Linear MPC with a feasibility governor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Membership tolerance for the set and output audits.
    #[arg(long)]
    tol: Option<f64>,
    /// Largest horizon tried by `nstar`.
    #[arg(long)]
    cap: Option<usize>,
    /// Print only essential results.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build T, Gamma_N, Lambda, R_eps and the governed ROA and export them.
    Sets(Common),
    /// Run one closed loop and audit it.
    Simulate(Common),
    /// Run every controller listed under `controllers` and tabulate the metrics.
    Compare(Common),
    /// Smallest horizon for which the OCP is feasible at (x0, r).
    Nstar(Common),
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FGMPC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FGMPC_THREADS must be a positive integer, got '{v}'"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    // Without the parallel backend there is no pool to size.
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

type Handler = fn(&Ctx) -> Result<Outcome, Failure>;

fn run(cmd: Command) -> Result<Outcome, Failure> {
    let (common, f): (Common, Handler) = match cmd {
        Command::Sets(c) => (c, commands::sets),
        Command::Simulate(c) => (c, commands::simulate_cmd),
        Command::Compare(c) => (c, commands::compare),
        Command::Nstar(c) => (c, commands::nstar),
    };
    let config = config::load(&common.config).map_err(Failure::Config)?;
    let base_dir = common
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_default();
    if let Some(t) = common.tol {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Failure::Config(anyhow::anyhow!("--tol must be a finite nonnegative number")));
        }
    }
    let out = commands::resolve_out(common.out, &config, &base_dir).map_err(Failure::Config)?;
    let ctx = Ctx {
        config,
        base_dir,
        out,
        tol: common.tol,
        cap: common.cap,
        quiet: common.quiet,
    };
    f(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::AuditFailed) => {
            eprintln!("audit failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
