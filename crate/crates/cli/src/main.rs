//! `egmu`: minimum-divergence portfolio weights from the command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 solver did not converge (outputs
//! are still written), 3 I/O failure.

mod commands;
mod dispatch;
mod error;
mod output;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use egmu::Integrator;

use crate::commands::{CheckArgs, PathArgs};
use crate::dispatch::Overrides;
use crate::error::{invalid, CliResult};
use crate::problem::SolverKind;

#[derive(Parser)]
#[command(name = "egmu", version, about = "Minimum-KL portfolio weights under factor-exposure targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Tuning {
    /// Elastic targets with this penalty (overrides the problem's mode).
    #[arg(long, value_name = "LAMBDA")]
    soft: Option<f64>,
    /// Stopping tolerance.
    #[arg(long, value_name = "EPS")]
    tol: Option<f64>,
    /// Iteration (or cycle) limit.
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Rk2,
    Euler,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the weights and write weights.csv and report.json.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Derivatives of the optimum with respect to the targets.
    Sensitivity {
        problem: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        /// Assets listed per factor in top_movers.csv.
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Follow the optimum as the targets move along a direction.
    Path {
        problem: PathBuf,
        /// Targets file of (factor, value) rows, or inline `factor=value,...`.
        #[arg(long)]
        delta: String,
        #[arg(long, default_value_t = 0.02)]
        h: f64,
        #[arg(long, value_enum, default_value = "rk2")]
        integrator: IntegratorArg,
        /// Skip the Newton corrector after each step.
        #[arg(long)]
        no_correct: bool,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a weights file against the optimality conditions.
    Check {
        problem: PathBuf,
        weights: PathBuf,
        #[arg(long, value_name = "LAMBDA")]
        soft: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        spread_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        residual_tol: f64,
    },
}

fn overrides(solver: Option<SolverKind>, t: &Tuning) -> Overrides {
    Overrides {
        solver,
        soft: t.soft,
        tol: t.tol,
        max_iter: t.max_iter,
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("EGMU_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| invalid(format!("EGMU_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| invalid(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Solve {
            problem,
            solver,
            tuning,
            out,
        } => commands::solve(&problem, &overrides(solver, &tuning), &out),
        Command::Sensitivity {
            problem,
            tuning,
            top,
            out,
        } => commands::sensitivity(&problem, &overrides(None, &tuning), top, &out),
        Command::Path {
            problem,
            delta,
            h,
            integrator,
            no_correct,
            tuning,
            out,
        } => {
            let args = PathArgs {
                delta: &delta,
                h,
                integrator: match integrator {
                    IntegratorArg::Rk2 => Integrator::Rk2,
                    IntegratorArg::Euler => Integrator::Euler,
                },
                correct: !no_correct,
            };
            commands::path(&problem, &overrides(None, &tuning), &args, &out)
        }
        Command::Check {
            problem,
            weights,
            soft,
            spread_tol,
            residual_tol,
        } => commands::check(
            &problem,
            &weights,
            &CheckArgs {
                soft,
                spread_tol,
                residual_tol,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
