//! Solver selection and invocation.

use egmu::{
    feasibility_screen, solve_dykstra, solve_elastic, solve_equality, solve_ipf, solve_robust, strip_intercept,
    ConstraintSet, FeasibilityVerdict, Instance, NewtonConfig, ProxConfig, RobustSet, SolveReport, Status,
    TargetMode,
};
use nalgebra::DVector;

use crate::error::{invalid, CliResult};
use crate::problem::{Problem, SolverKind};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Command-line values that take precedence over the problem file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub solver: Option<SolverKind>,
    pub soft: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub requested: SolverKind,
    pub solver: SolverKind,
    pub mode: TargetMode,
    pub tol: f64,
    pub max_iter: usize,
}

impl Settings {
    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }

    pub fn lambda_soft(&self) -> Option<f64> {
        match self.mode {
            TargetMode::Elastic { lambda_soft } => Some(lambda_soft),
            _ => None,
        }
    }
}

fn default_max_iter(s: SolverKind) -> usize {
    match s {
        SolverKind::Ipf | SolverKind::Dykstra => egmu::projection::DEFAULT_MAX_CYCLES,
        SolverKind::Proxgrad => ProxConfig::default().max_iter,
        _ => NewtonConfig::default().max_iter,
    }
}

pub fn mode_name(m: &TargetMode) -> &'static str {
    match m {
        TargetMode::Equality => "equality",
        TargetMode::Elastic { .. } => "elastic",
        TargetMode::RobustL2 { .. } => "robust_l2",
        TargetMode::RobustLinf { .. } => "robust_linf",
    }
}

/// Applies overrides and picks a solver able to represent the problem.
pub fn resolve(problem: &Problem, ov: &Overrides) -> CliResult<Settings> {
    let mode = match (ov.soft, problem.mode) {
        (None, m) => m,
        (Some(l), TargetMode::Equality | TargetMode::Elastic { .. }) => {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid(format!("--soft must be positive and finite, got {l}")));
            }
            TargetMode::Elastic { lambda_soft: l }
        }
        (Some(_), m) => {
            return Err(invalid(format!("--soft cannot be combined with {} targets", mode_name(&m))));
        }
    };
    let has_ineq = !problem.inequalities.is_empty();
    let requested = ov.solver.or(problem.solver.name).unwrap_or(SolverKind::Auto);
    let solver = match requested {
        SolverKind::Auto => match mode {
            TargetMode::RobustL2 { .. } | TargetMode::RobustLinf { .. } => SolverKind::Proxgrad,
            _ if has_ineq => SolverKind::Dykstra,
            TargetMode::Elastic { .. } => SolverKind::Elastic,
            TargetMode::Equality => SolverKind::Newton,
        },
        s => s,
    };
    let robust = matches!(mode, TargetMode::RobustL2 { .. } | TargetMode::RobustLinf { .. });
    let supported = match solver {
        SolverKind::Newton => !robust,
        SolverKind::Elastic => matches!(mode, TargetMode::Elastic { .. }),
        SolverKind::Ipf | SolverKind::Dykstra => mode == TargetMode::Equality,
        SolverKind::Proxgrad => mode == TargetMode::Equality || robust,
        SolverKind::Auto => unreachable!(),
    };
    if !supported {
        return Err(invalid(format!(
            "solver {} cannot handle {} targets{}",
            solver.as_str(),
            mode_name(&mode),
            if solver == SolverKind::Elastic { " (set --soft or an elastic mode)" } else { "" }
        )));
    }
    if has_ineq && solver != SolverKind::Dykstra {
        return Err(invalid(format!(
            "inequality rows need the dykstra solver with equality targets, not {} with {} targets",
            solver.as_str(),
            mode_name(&mode)
        )));
    }
    let tol = ov.tol.or(problem.solver.tol).unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let max_iter = ov.max_iter.or(problem.solver.max_iter).unwrap_or(default_max_iter(solver));
    if max_iter == 0 {
        return Err(invalid("max_iter must be at least 1"));
    }
    log::info!("solver {} for {} targets", solver.as_str(), mode_name(&mode));
    Ok(Settings {
        requested,
        solver,
        mode,
        tol,
        max_iter,
    })
}

pub struct Solved {
    pub report: SolveReport,
    /// Factor duals in problem order; zero for stripped intercept columns.
    /// Empty for the projection solvers when every factor was stripped.
    pub theta: DVector<f64>,
    /// One per inequality row, from the Dykstra solver only.
    pub multipliers: Option<DVector<f64>>,
    pub stripped: Vec<usize>,
}

/// Rejects targets outside a factor's exposure range.
pub fn screen(problem: &Problem, inst: &Instance) -> CliResult<()> {
    if let FeasibilityVerdict::Infeasible { factor, target, min, max } = feasibility_screen(inst, &problem.targets)? {
        return Err(invalid(format!(
            "target {target} for factor '{}' lies outside its exposure range [{min}, {max}]",
            problem.factors[factor]
        )));
    }
    Ok(())
}

pub fn run(problem: &Problem, inst: &Instance, s: &Settings) -> CliResult<Solved> {
    let k = problem.factors.len();
    let t = &problem.targets;
    let (work, tw, kept) = if s.mode == TargetMode::Equality {
        screen(problem, inst)?;
        let (i2, t2, rep) = strip_intercept(inst, t)?;
        let kept = rep.kept(k);
        (i2, t2, kept)
    } else {
        (inst.clone(), t.clone(), (0..k).collect())
    };
    let stripped: Vec<usize> = (0..k).filter(|j| !kept.contains(j)).collect();
    if !stripped.is_empty() {
        let names: Vec<&str> = stripped.iter().map(|&j| problem.factors[j].as_str()).collect();
        log::info!("constant exposure columns dropped: {}", names.join(", "));
    }

    let halfspaces: Vec<_> = problem.inequalities.iter().map(|c| c.constraint.clone()).collect();
    let report = if kept.is_empty() && halfspaces.is_empty() {
        trivial(inst)
    } else {
        match s.solver {
            SolverKind::Newton | SolverKind::Elastic => match s.lambda_soft() {
                Some(l) => solve_elastic(&work, &tw, l, &s.newton())?,
                None => solve_equality(&work, &tw, &s.newton())?,
            },
            SolverKind::Ipf => {
                let sets = ConstraintSet::from_factor_targets(&work, &tw);
                solve_ipf(&work, &sets.equalities, s.tol, s.max_iter)?
            }
            SolverKind::Dykstra => {
                let mut sets = ConstraintSet::from_factor_targets(&work, &tw);
                sets.halfspaces = halfspaces;
                solve_dykstra(&work, &sets, s.tol, s.max_iter)?
            }
            SolverKind::Proxgrad => {
                let set = match s.mode {
                    TargetMode::RobustL2 { rho } => RobustSet::L2Ball { rho },
                    TargetMode::RobustLinf { rho } => RobustSet::LinfBox { rho },
                    _ => RobustSet::L2Ball { rho: 0.0 },
                };
                let cfg = ProxConfig {
                    step: None,
                    tol: s.tol,
                    max_iter: s.max_iter,
                };
                solve_robust(&work, &tw, set, &cfg)?
            }
            SolverKind::Auto => unreachable!("resolved before running"),
        }
    };

    let mut theta = DVector::zeros(k);
    for (pos, &j) in kept.iter().enumerate() {
        theta[j] = report.theta.get(pos).copied().unwrap_or(0.0);
    }
    let multipliers = (s.solver == SolverKind::Dykstra)
        .then(|| report.theta.rows(kept.len(), report.theta.len() - kept.len()).into_owned());
    Ok(Solved {
        report,
        theta,
        multipliers,
        stripped,
    })
}

/// Every factor was a consistent intercept and nothing else constrains `w`.
fn trivial(inst: &Instance) -> SolveReport {
    SolveReport {
        weights: inst.benchmark().clone(),
        theta: DVector::zeros(0),
        residual: DVector::zeros(0),
        exposure_gap: DVector::zeros(0),
        iterations: 0,
        trace: Vec::new(),
        status: Status::Converged,
    }
}
