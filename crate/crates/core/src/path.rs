//! Homotopy integration of the optimal dual along `t(λ) = t₀ + λΔ`.
//!
//! The optimum satisfies `dθ/dλ = (Σ(θ) + I/λ_soft)⁻¹ Δ`, with the `I/λ_soft`
//! term dropped for equality targets.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::newton::{solve_elastic, solve_equality, NewtonConfig};
use crate::numerics::{regularized_solve, tilt, tilted_weights};
use crate::report::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    /// Explicit midpoint.
    Rk2,
}

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub h: f64,
    pub integrator: Integrator,
    /// Re-center with a few Newton iterations after every step.
    pub correct: bool,
    pub corrector_iters: usize,
    pub lambda_soft: Option<f64>,
    /// Start the elastic path at `θ = 0` instead of solving at `t₀`.
    pub start_at_zero: bool,
    pub newton: NewtonConfig,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            h: 0.02,
            integrator: Integrator::Rk2,
            correct: true,
            corrector_iters: 3,
            lambda_soft: None,
            start_at_zero: false,
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathSample {
    pub lambda: f64,
    pub theta: DVector<f64>,
    pub weights: crate::model::Weights,
    /// `t(λ) − Xᵀw`.
    pub residual: DVector<f64>,
    /// Norm of the dual gradient at `t(λ)`; equals `‖residual‖` for equality paths.
    pub stationarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathEvent {
    /// The path matrix needed a ridge to factorize.
    Ridge { lambda: f64, delta: f64 },
}

#[derive(Debug, Clone)]
pub struct PathTrace {
    pub samples: Vec<PathSample>,
    pub h: f64,
    pub integrator: Integrator,
    pub corrected: bool,
    pub events: Vec<PathEvent>,
}

impl PathTrace {
    pub fn last(&self) -> &PathSample {
        self.samples.last().expect("a path always holds its starting sample")
    }
}

struct Rhs<'a> {
    inst: &'a Instance,
    delta: &'a DVector<f64>,
    penalty: f64,
    cfg: &'a NewtonConfig,
}

impl Rhs<'_> {
    fn eval(&self, theta: &DVector<f64>, lambda: f64, events: &mut Vec<PathEvent>) -> Result<DVector<f64>> {
        let p = tilt(self.inst, theta);
        if let Ok(d) = regularized_solve(&p.cov, self.delta, self.penalty) {
            return Ok(d);
        }
        if self.penalty > 0.0 {
            return Err(Error::SingularAlongPath { lambda });
        }
        let k = theta.len().max(1) as f64;
        let ridge = self.cfg.ridge_floor.max(self.cfg.ridge_scale * p.cov.trace() / k);
        events.push(PathEvent::Ridge { lambda, delta: ridge });
        regularized_solve(&p.cov, self.delta, ridge).map_err(|_| Error::SingularAlongPath { lambda })
    }
}

/// Integrates the optimal dual from `λ = 0` to `λ = 1` in steps of `h`
/// (the last step is shortened to land on 1).
pub fn trace_path(inst: &Instance, t0: &DVector<f64>, delta: &DVector<f64>, opts: &PathOptions) -> Result<PathTrace> {
    inst.check_targets(t0)?;
    inst.check_targets(delta)?;
    if !(opts.h > 0.0 && opts.h <= 1.0) {
        return Err(Error::InvalidConfig(format!("step h must lie in (0, 1], got {}", opts.h)));
    }
    let penalty = match opts.lambda_soft {
        Some(l) if !(l > 0.0) => {
            return Err(Error::InvalidConfig(format!("lambda_soft must be positive, got {l}")))
        }
        Some(l) => 1.0 / l,
        None => 0.0,
    };
    if opts.start_at_zero && opts.lambda_soft.is_none() {
        return Err(Error::InvalidConfig(
            "starting at zero is only available for elastic paths".into(),
        ));
    }

    let solve = |t: &DVector<f64>, cfg: &NewtonConfig| match opts.lambda_soft {
        Some(l) => solve_elastic(inst, t, l, cfg),
        None => solve_equality(inst, t, cfg),
    };

    let mut theta = if opts.start_at_zero {
        DVector::zeros(inst.n_factors())
    } else {
        let r = solve(t0, &opts.newton)?;
        if r.status != Status::Converged {
            return Err(Error::InfeasibleStart(r.status.to_string()));
        }
        r.theta
    };

    let sample = |lambda: f64, theta: &DVector<f64>| {
        let t = t0 + delta * lambda;
        let (w, _) = tilted_weights(inst, theta);
        let residual = &t - inst.exposure_of(&w);
        let stationarity = (&residual - theta * penalty).norm();
        PathSample {
            lambda,
            theta: theta.clone(),
            weights: w,
            residual,
            stationarity,
        }
    };

    let rhs = Rhs {
        inst,
        delta,
        penalty,
        cfg: &opts.newton,
    };
    let corrector = NewtonConfig {
        max_iter: opts.corrector_iters,
        ..opts.newton.clone()
    };

    let steps = (1.0 / opts.h - 1e-9).ceil().max(1.0) as usize;
    let mut events = Vec::new();
    let mut samples = vec![sample(0.0, &theta)];
    let mut lambda = 0.0;
    for j in 1..=steps {
        let next = if j == steps { 1.0 } else { j as f64 * opts.h };
        let h = next - lambda;
        let k1 = rhs.eval(&theta, lambda, &mut events)?;
        let dtheta = match opts.integrator {
            Integrator::Euler => k1,
            Integrator::Rk2 => {
                let mid = &theta + &k1 * (0.5 * h);
                rhs.eval(&mid, lambda + 0.5 * h, &mut events)?
            }
        };
        theta += dtheta * h;
        lambda = next;
        if opts.correct {
            let t = t0 + delta * lambda;
            let cfg = NewtonConfig {
                theta0: Some(theta.clone()),
                ..corrector.clone()
            };
            let r = solve(&t, &cfg)?;
            if r.theta.iter().all(|v| v.is_finite()) {
                theta = r.theta;
            }
        }
        samples.push(sample(lambda, &theta));
    }

    Ok(PathTrace {
        samples,
        h: opts.h,
        integrator: opts.integrator,
        corrected: opts.correct,
        events,
    })
}
