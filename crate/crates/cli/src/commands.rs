use std::cmp::Ordering;
use std::path::Path;

use egmu::{
    kkt_check, kl_divergence, sensitivity as sensitivity_at, solve_elastic, solve_equality, tilt, trace_path,
    ConstraintSet, Error, Instance, Integrator, PathOptions, SolveReport, TargetMode, TraceEntry,
};
use nalgebra::DVector;
use serde_json::Value;

use crate::dispatch::{mode_name, resolve, run, screen, Overrides, Settings};
use crate::error::{invalid, CliError, CliResult};
use crate::output::{json_num, json_nums, json_tol, num, Obj, OutDir};
use crate::problem::{Problem, SolverKind};

fn mode_json(m: &TargetMode) -> Value {
    let o = Obj::new().set("kind", mode_name(m));
    match *m {
        TargetMode::Equality => o,
        TargetMode::Elastic { lambda_soft } => o.set("lambda_soft", json_num(lambda_soft)),
        TargetMode::RobustL2 { rho } | TargetMode::RobustLinf { rho } => o.set("rho", json_num(rho)),
    }
    .into()
}

fn trace_json(trace: &[TraceEntry]) -> Value {
    trace
        .iter()
        .map(|e| {
            Obj::new()
                .set("residual_norm", json_num(e.residual_norm))
                .set("step", json_num(e.step))
                .set("log_z", e.log_z.map_or(Value::Null, json_num))
                .set("objective", json_num(e.objective))
                .into()
        })
        .collect::<Vec<Value>>()
        .into()
}

fn strings<'a>(xs: impl IntoIterator<Item = &'a String>) -> Value {
    xs.into_iter().map(|s| Value::from(s.as_str())).collect::<Vec<_>>().into()
}

/// Fields shared by every report that wraps a solve.
fn summary(command: &str, problem: &Problem, s: &Settings, r: &SolveReport, theta: &DVector<f64>) -> Obj {
    let w = r.weights.as_vector();
    let gap = &problem.targets - problem.exposures.transpose() * w;
    Obj::new()
        .set("command", command)
        .set("solver", s.solver.as_str())
        .set("requested_solver", s.requested.as_str())
        .set("mode", mode_json(&s.mode))
        .set("status", r.status.as_str())
        .set("converged", r.is_converged())
        .set("iterations", r.iterations)
        .set("factors", strings(&problem.factors))
        .set("theta", json_nums(theta.iter()))
        .set("targets", json_nums(problem.targets.iter()))
        .set("exposure_residuals", json_nums(gap.iter()))
        .set("residual_norm", json_num(r.residual_norm()))
        .set("kl", json_num(kl_divergence(w, &problem.benchmark)))
        .set(
            "tolerances",
            Obj::new().set("tol", json_tol(s.tol)).set("max_iter", s.max_iter),
        )
}

fn multi_period_json(problem: &Problem, w: &DVector<f64>, prior: &DVector<f64>) -> Option<Value> {
    let mp = problem.multi_period.as_ref()?;
    let kl_b = kl_divergence(w, &problem.benchmark);
    let kl_p = kl_divergence(w, &mp.prev);
    Some(
        Obj::new()
            .set("gamma", json_num(mp.gamma))
            .set("kl_prev", json_num(kl_p))
            .set("kl_prior", json_num(kl_divergence(w, prior)))
            .set("blended_objective", json_num(kl_b + mp.gamma * kl_p))
            .set("blended_prior", json_nums(prior.iter()))
            .into(),
    )
}

fn is_active(slack: f64, bound: f64) -> bool {
    slack.abs() <= egmu::diagnostics::ACTIVE_TOL * bound.abs().max(1.0)
}

fn finish(r: &SolveReport) -> CliResult<()> {
    if r.is_converged() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "solver stopped with status {} after {} iterations (residual norm {:.3e})",
            r.status,
            r.iterations,
            r.residual_norm()
        )))
    }
}

pub fn solve(path: &Path, ov: &Overrides, out: &Path) -> CliResult<()> {
    let problem = Problem::load(path)?;
    let s = resolve(&problem, ov)?;
    let (inst, prior) = problem.prior_instance()?;
    let solved = run(&problem, &inst, &s)?;
    let r = &solved.report;
    let w = r.weights.as_vector();
    let dir = OutDir::create(out)?;

    let slacks: Vec<f64> = problem
        .inequalities
        .iter()
        .map(|c| c.constraint.value(w) - c.constraint.bound)
        .collect();
    let mut active = vec![Vec::<&str>::new(); problem.n_assets()];
    for (c, &sl) in problem.inequalities.iter().zip(&slacks) {
        if !is_active(sl, c.constraint.bound) {
            continue;
        }
        match c.asset {
            Some(i) => active[i].push(&c.name),
            None => {
                for (i, a) in c.constraint.a.iter().enumerate() {
                    if *a != 0.0 {
                        active[i].push(&c.name);
                    }
                }
            }
        }
    }
    let rows: Vec<Vec<String>> = (0..problem.n_assets())
        .map(|i| {
            vec![
                problem.asset_ids[i].clone(),
                num(problem.benchmark[i]),
                num(w[i]),
                active[i].join(";"),
            ]
        })
        .collect();
    let header = ["asset_id", "benchmark", "weight", "active_constraints"].map(String::from);
    dir.write_csv("weights.csv", &header, &rows)?;

    let mut rep = summary("solve", &problem, &s, r, &solved.theta);
    let constraints: Vec<Value> = problem
        .inequalities
        .iter()
        .enumerate()
        .map(|(j, c)| {
            Obj::new()
                .set("name", c.name.as_str())
                .set("asset", c.asset.map_or(Value::Null, |i| problem.asset_ids[i].as_str().into()))
                .set("slack", json_num(slacks[j]))
                .set("active", is_active(slacks[j], c.constraint.bound))
                .set(
                    "multiplier",
                    solved.multipliers.as_ref().map_or(Value::Null, |m| json_num(m[j])),
                )
                .into()
        })
        .collect();
    rep.put("constraints", constraints);
    rep.put("intercepts_removed", strings(solved.stripped.iter().map(|&j| &problem.factors[j])));
    if let Some(p) = &prior {
        if let Some(v) = multi_period_json(&problem, w, p.as_vector()) {
            rep.put("multi_period", v);
        }
    }
    rep.put("trace", trace_json(&r.trace));
    dir.write_json("report.json", &rep.into())?;
    finish(r)
}

/// Solver settings for the commands that need the equality or elastic dual.
fn dual_settings(problem: &Problem, ov: &Overrides, command: &str) -> CliResult<Settings> {
    if !problem.inequalities.is_empty() {
        return Err(invalid(format!("{command} does not support inequality rows")));
    }
    let ov = Overrides {
        solver: Some(SolverKind::Newton),
        ..ov.clone()
    };
    let s = resolve(problem, &ov)?;
    if !matches!(s.mode, TargetMode::Equality | TargetMode::Elastic { .. }) {
        return Err(invalid(format!(
            "{command} needs equality or elastic targets, not {}",
            mode_name(&s.mode)
        )));
    }
    Ok(s)
}

fn solve_dual(problem: &Problem, inst: &Instance, s: &Settings) -> CliResult<SolveReport> {
    Ok(match s.lambda_soft() {
        Some(l) => solve_elastic(inst, &problem.targets, l, &s.newton())?,
        None => {
            screen(problem, inst)?;
            solve_equality(inst, &problem.targets, &s.newton())?
        }
    })
}

pub fn sensitivity(path: &Path, ov: &Overrides, top: usize, out: &Path) -> CliResult<()> {
    let problem = Problem::load(path)?;
    let s = dual_settings(&problem, ov, "sensitivity")?;
    let (inst, _) = problem.prior_instance()?;
    let r = solve_dual(&problem, &inst, &s)?;
    let dir = OutDir::create(out)?;
    let mut rep = summary("sensitivity", &problem, &s, &r, &r.theta);
    if !r.is_converged() {
        dir.write_json("report.json", &rep.into())?;
        return finish(&r);
    }

    let point = tilt(&inst, &r.theta);
    let k = problem.factors.len();
    let mut fheader = vec!["factor".to_string()];
    fheader.extend(problem.factors.iter().cloned());
    match sensitivity_at(&inst, &point, s.lambda_soft()) {
        Ok(sens) => {
            let rows: Vec<Vec<String>> = (0..k)
                .map(|i| {
                    let mut row = vec![problem.factors[i].clone()];
                    row.extend((0..k).map(|j| num(sens.dtheta_dt[(i, j)])));
                    row
                })
                .collect();
            dir.write_csv("dtheta_dt.csv", &fheader, &rows)?;

            let mut aheader = vec!["asset_id".to_string()];
            aheader.extend(problem.factors.iter().cloned());
            let rows: Vec<Vec<String>> = (0..problem.n_assets())
                .map(|i| {
                    let mut row = vec![problem.asset_ids[i].clone()];
                    row.extend((0..k).map(|j| num(sens.dw_dt[(i, j)])));
                    row
                })
                .collect();
            dir.write_csv("dw_dt.csv", &aheader, &rows)?;

            let mut rows = Vec::new();
            for j in 0..k {
                let col = sens.dw_dt.column(j);
                let mut order: Vec<usize> = (0..problem.n_assets()).collect();
                order.sort_by(|&a, &b| col[b].abs().partial_cmp(&col[a].abs()).unwrap_or(Ordering::Equal));
                for (rank, &i) in order.iter().take(top).enumerate() {
                    rows.push(vec![
                        problem.factors[j].clone(),
                        (rank + 1).to_string(),
                        problem.asset_ids[i].clone(),
                        num(col[i]),
                    ]);
                }
            }
            let header = ["factor", "rank", "asset_id", "dw_dt"].map(String::from);
            dir.write_csv("top_movers.csv", &header, &rows)?;
            dir.write_json("report.json", &rep.into())?;
            Ok(())
        }
        Err(Error::SingularCovariance { null_space }) => {
            let m = null_space.ncols();
            let mut header = vec!["factor".to_string()];
            header.extend((1..=m).map(|c| format!("v{c}")));
            let rows: Vec<Vec<String>> = (0..k)
                .map(|i| {
                    let mut row = vec![problem.factors[i].clone()];
                    row.extend((0..m).map(|c| num(null_space[(i, c)])));
                    row
                })
                .collect();
            dir.write_csv("null_space.csv", &header, &rows)?;
            rep.put("status", "SingularCovariance");
            rep.put("null_space_dimension", m);
            dir.write_json("report.json", &rep.into())?;
            Err(CliError::NotConverged(format!(
                "exposure covariance is singular at the optimum (null space of dimension {m}, see null_space.csv)"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub struct PathArgs<'a> {
    pub delta: &'a str,
    pub h: f64,
    pub integrator: Integrator,
    pub correct: bool,
}

pub fn path(path: &Path, ov: &Overrides, args: &PathArgs<'_>, out: &Path) -> CliResult<()> {
    let problem = Problem::load(path)?;
    let s = dual_settings(&problem, ov, "path")?;
    let (inst, _) = problem.prior_instance()?;
    let delta = problem.parse_direction(args.delta)?;
    if s.lambda_soft().is_none() {
        screen(&problem, &inst)?;
    }
    let opts = PathOptions {
        h: args.h,
        integrator: args.integrator,
        correct: args.correct,
        lambda_soft: s.lambda_soft(),
        newton: s.newton(),
        ..Default::default()
    };
    let dir = OutDir::create(out)?;
    let mut rep = Obj::new()
        .set("command", "path")
        .set("mode", mode_json(&s.mode))
        .set("factors", strings(&problem.factors))
        .set("start", json_nums(problem.targets.iter()))
        .set("direction", json_nums(delta.iter()))
        .set("h", json_num(args.h))
        .set(
            "integrator",
            match args.integrator {
                Integrator::Euler => "euler",
                Integrator::Rk2 => "rk2",
            },
        )
        .set("corrected", args.correct)
        .set(
            "tolerances",
            Obj::new().set("tol", json_tol(s.tol)).set("max_iter", s.max_iter),
        );
    let trace = match trace_path(&inst, &problem.targets, &delta, &opts) {
        Ok(t) => t,
        Err(e @ (Error::SingularAlongPath { .. } | Error::InfeasibleStart(_))) => {
            rep.put("status", "Failed");
            rep.put("error", e.to_string());
            if let Error::SingularAlongPath { lambda } = e {
                rep.put("failed_at", json_num(lambda));
            }
            dir.write_json("report.json", &rep.into())?;
            return Err(CliError::NotConverged(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };

    let mut header = vec!["lambda".to_string()];
    header.extend(problem.factors.iter().map(|f| format!("theta_{f}")));
    header.extend(problem.factors.iter().map(|f| format!("residual_{f}")));
    header.extend(["kl", "min_weight", "max_weight"].map(String::from));
    let b = inst.benchmark().as_vector();
    let rows: Vec<Vec<String>> = trace
        .samples
        .iter()
        .map(|smp| {
            let mut row = vec![num(smp.lambda)];
            row.extend(smp.theta.iter().map(|v| num(*v)));
            row.extend(smp.residual.iter().map(|v| num(*v)));
            row.push(num(kl_divergence(smp.weights.as_vector(), b)));
            row.push(num(smp.weights.min()));
            row.push(num(smp.weights.max()));
            row
        })
        .collect();
    dir.write_csv("path.csv", &header, &rows)?;

    let events: Vec<Value> = trace
        .events
        .iter()
        .map(|e| match *e {
            egmu::PathEvent::Ridge { lambda, delta } => Obj::new()
                .set("kind", "ridge")
                .set("lambda", json_num(lambda))
                .set("ridge", json_num(delta))
                .into(),
        })
        .collect();
    rep.put("status", "Completed");
    rep.put("samples", trace.samples.len());
    rep.put("final_stationarity", json_num(trace.last().stationarity));
    rep.put("events", events);
    dir.write_json("report.json", &rep.into())?;
    Ok(())
}

pub struct CheckArgs {
    pub soft: Option<f64>,
    pub spread_tol: f64,
    pub residual_tol: f64,
}

pub fn check(path: &Path, weights: &Path, args: &CheckArgs) -> CliResult<()> {
    let problem = Problem::load(path)?;
    let w = problem.read_weights_file(weights)?;
    if let Some(i) = w.iter().position(|v| !(*v >= 0.0)) {
        return Err(invalid(format!(
            "weight of asset '{}' is negative ({})",
            problem.asset_ids[i], w[i]
        )));
    }
    if !(w.sum() > 0.0) {
        return Err(invalid("weights file has no positive weight"));
    }
    let mode = match (args.soft, problem.mode) {
        (Some(l), TargetMode::Equality | TargetMode::Elastic { .. }) => TargetMode::Elastic { lambda_soft: l },
        (Some(_), m) => {
            return Err(invalid(format!("--soft cannot be combined with {} targets", mode_name(&m))));
        }
        (None, m) => m,
    };
    let (inst, _) = problem.prior_instance()?;
    let sets = ConstraintSet::new(
        Vec::new(),
        problem.inequalities.iter().map(|c| c.constraint.clone()).collect(),
    );
    let t = &problem.targets;
    let gap = t - inst.exposure_of(&w);
    let (kkt, set_violation) = match mode {
        TargetMode::Equality => (kkt_check(&inst, &w, None, Some(t), Some(&sets))?, 0.0),
        TargetMode::Elastic { lambda_soft } => {
            let theta = &gap * lambda_soft;
            (kkt_check(&inst, &w, Some(&theta), None, Some(&sets))?, 0.0)
        }
        TargetMode::RobustL2 { rho } => {
            let v = (gap.norm() - rho).max(0.0);
            (kkt_check(&inst, &w, None, None, Some(&sets))?, v)
        }
        TargetMode::RobustLinf { rho } => {
            let v = (gap.amax() - rho).max(0.0);
            (kkt_check(&inst, &w, None, None, Some(&sets))?, v)
        }
    };
    let budget = (w.sum() - 1.0).abs();
    let pass = kkt.passes(args.spread_tol, args.residual_tol)
        && budget <= args.residual_tol
        && set_violation <= args.residual_tol;

    println!("status: {}", if pass { "pass" } else { "fail" });
    println!("mode: {}", mode_name(&mode));
    println!("kl: {}", num(kkt.kl_value));
    println!("stationarity_spread: {}", num(kkt.stationarity_spread));
    println!("budget_residual: {}", num(budget));
    if mode == TargetMode::Equality {
        println!("max_exposure_residual: {}", num(kkt.max_exposure_residual()));
    }
    if matches!(mode, TargetMode::RobustL2 { .. } | TargetMode::RobustLinf { .. }) {
        println!("target_set_violation: {}", num(set_violation));
    }
    println!("max_constraint_violation: {}", num(kkt.max_constraint_violation()));
    for (j, f) in problem.factors.iter().enumerate() {
        println!("exposure_residual.{f}: {}", num(gap[j]));
    }
    for (j, f) in problem.factors.iter().enumerate() {
        println!("theta.{f}: {}", num(kkt.theta[j]));
    }
    for (c, sl) in problem.inequalities.iter().zip(&kkt.inequality_slacks) {
        match c.asset {
            Some(i) => println!("slack.{}.{}: {}", c.name, problem.asset_ids[i], num(*sl)),
            None => println!("slack.{}: {}", c.name, num(*sl)),
        }
    }
    println!("tolerances: spread {:.2e}, residual {:.2e}", args.spread_tol, args.residual_tol);

    if pass {
        Ok(())
    } else {
        Err(CliError::NotConverged("weights fail the optimality check".into()))
    }
}
