//! `ucpadp` command-line front end.
//!
//! Exit codes: 0 converged, 1 usage or configuration error, 2 horizon cap
//! reached without convergence, 3 infeasible rollout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ucpadp::equilibrium::default_tolerance;
use ucpadp::reference::compare;
use ucpadp::{
    equilibrium_search, horizon_sweep, rollout_stationary, Error, ProblemDef, RolloutTrace, SolveReport,
    SolveStatus, Solver,
};

use ucpadp_cli::config::{parse_list, parse_usize_list, ConfigError, RunConfig};
use ucpadp_cli::output;

#[derive(Parser)]
#[command(name = "ucpadp", version, about = "Growing-horizon grid ADP policy solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write policy.csv, metrics.csv and report.txt.
    Solve(Common),
    /// Solve, then simulate the stationary policy into trajectory.csv.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Initial state, comma separated (default `rollout.x0`, else zeros).
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Number of samples (default `rollout.horizon`, else 10x the terminal horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Solve, then compare against the long-horizon reference into compare.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
    },
    /// Average relaxed cost per initial node for several problem horizons.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Problem horizons, comma separated (default `sweep.horizons`).
        #[arg(long)]
        horizons: Option<String>,
        /// Trajectory length (default `sweep.trajectory_horizon`, else 10x the longest horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Cheapest gridded equilibrium into equilibrium.csv.
    Equilibrium(Common),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(Error::RolloutInfeasible { .. }) => 3,
            _ => 1,
        }
    }
}

struct Context {
    cfg: RunConfig,
    problem: ProblemDef,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self, CliError> {
        let cfg = RunConfig::load(&common.config)?;
        let problem = cfg.problem()?;
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self { cfg, problem, out })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    fn x0(&self, flag: Option<&str>) -> Result<Vec<f64>, CliError> {
        let dim = self.cfg.xgrid.dim();
        let x0 = match flag {
            Some(s) => parse_list("--x0", s)?,
            None => self.cfg.x0.clone().unwrap_or_else(|| vec![0.0; dim]),
        };
        if x0.len() != dim {
            return Err(CliError::Usage(format!("--x0 needs {dim} components, got {}", x0.len())));
        }
        Ok(x0)
    }

    fn solver(&self) -> Result<Solver, CliError> {
        Ok(Solver::new(&self.problem, &self.cfg.xgrid, &self.cfg.ugrid, self.cfg.solver.clone())?)
    }

    /// Runs the solver and writes policy.csv, metrics.csv and report.txt.
    fn solve(&self, solver: &mut Solver) -> Result<SolveReport, CliError> {
        let report = solver.run_with_progress(|m| {
            eprintln!(
                "horizon {:>6}: delta_mu {:?} delta_x {:?} feasible {}/{}{}",
                m.horizon,
                m.delta_mu,
                m.delta_x,
                m.feasible_count,
                m.seeded_count,
                if m.passed() { " converged" } else { "" }
            );
        })?;
        let (xg, ug) = (&self.cfg.xgrid, &self.cfg.ugrid);
        self.write("policy.csv", &output::policy_csv(&report, xg, ug))?;
        self.write("metrics.csv", &output::metrics_csv(&report, xg.dim(), ug.dim()))?;
        self.write("report.txt", &output::report_txt(&self.problem.name, &report, xg, ug))?;
        eprintln!(
            "{} at horizon {} in {:.2?}",
            report.status.as_str(),
            report.terminal_horizon,
            report.wall_time
        );
        Ok(report)
    }
}

fn status_code(report: &SolveReport) -> u8 {
    match report.status {
        SolveStatus::Converged => 0,
        SolveStatus::HitNMax => 2,
    }
}

fn truncation_code(trace: &RolloutTrace) -> u8 {
    match &trace.truncated {
        Some((k, why)) => {
            eprintln!("rollout stopped at step {k}: {why}");
            3
        }
        None => 0,
    }
}

fn init_threads(n: usize) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Solve(c) | Command::Equilibrium(c) => c,
        Command::Rollout { common, .. } | Command::Compare { common, .. } | Command::Sweep { common, .. } => common,
    }
}

fn run(cmd: &Command) -> Result<u8, CliError> {
    init_threads(common(cmd).threads)?;
    let ctx = Context::new(common(cmd))?;
    match cmd {
        Command::Solve(_) => {
            let mut solver = ctx.solver()?;
            let report = ctx.solve(&mut solver)?;
            Ok(status_code(&report))
        }
        Command::Rollout { x0, horizon, .. } => {
            let x0 = ctx.x0(x0.as_deref())?;
            let mut solver = ctx.solver()?;
            let report = ctx.solve(&mut solver)?;
            let horizon = horizon
                .or(ctx.cfg.rollout_horizon)
                .unwrap_or(10 * report.terminal_horizon);
            let (xg, ug) = (&ctx.cfg.xgrid, &ctx.cfg.ugrid);
            let trace = rollout_stationary(&ctx.problem, xg, ug, &report.first_stage_policy, &x0, horizon)?;
            ctx.write("trajectory.csv", &output::trajectory_csv(&trace, xg.dim(), ug.dim()))?;
            let s = trace.summary();
            eprintln!("rollout: {} steps, mean cost {}, mean average {}", s.steps, s.mean_cost, s.mean_average);
            Ok(truncation_code(&trace).max(status_code(&report)))
        }
        Command::Compare { x0, .. } => {
            let x0 = ctx.x0(x0.as_deref())?;
            let mut solver = ctx.solver()?;
            let report = ctx.solve(&mut solver)?;
            let c = compare(&mut solver, &report, ctx.cfg.reference_multiplier, &x0)?;
            ctx.write("compare.csv", &output::compare_csv(&c))?;
            eprintln!(
                "compare over {} samples: mean cost {} vs {} (deviation {})",
                c.reference_horizon,
                c.ucpadp.summary().mean_cost,
                c.reference.summary().mean_cost,
                c.cost_deviation()
            );
            let code = truncation_code(&c.ucpadp).max(truncation_code(&c.reference));
            Ok(code.max(status_code(&report)))
        }
        Command::Sweep { horizons, horizon, .. } => {
            let hs = match horizons {
                Some(s) => parse_usize_list("--horizons", s)?,
                None => ctx.cfg.sweep_horizons.clone(),
            };
            if hs.is_empty() {
                return Err(CliError::Usage("no sweep horizons given (--horizons or sweep.horizons)".into()));
            }
            let longest = hs.iter().copied().max().unwrap_or(0);
            let traj = horizon.or(ctx.cfg.sweep_trajectory_horizon).unwrap_or(10 * longest);
            let table = horizon_sweep(&ctx.problem, &ctx.cfg.xgrid, &ctx.cfg.ugrid, &hs, traj)?;
            ctx.write("sweep.csv", &output::sweep_csv(&table))?;
            for r in &table.rows {
                eprintln!("horizon {:>6}: mean {} range [{}, {}]", r.horizon, r.mean(), r.min(), r.max());
            }
            Ok(0)
        }
        Command::Equilibrium(_) => {
            let tol = ctx.cfg.eq_tol.unwrap_or_else(|| default_tolerance(&ctx.cfg.xgrid));
            let eq = equilibrium_search(&ctx.problem, &ctx.cfg.xgrid, &ctx.cfg.ugrid, tol)?;
            ctx.write("equilibrium.csv", &output::equilibrium_csv(&eq))?;
            eprintln!("equilibrium x {:?} u {:?} cost {} residual {}", eq.x_eq, eq.u_eq, eq.cost, eq.residual);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
