//! KL projections onto hyperplanes and half-spaces of the simplex, cyclic
//! (IPF) projection for equality systems, and Bregman–Dykstra for mixed
//! equality/half-space intersections.
//!
//! The projection of `u` onto `{aᵀw = τ}` is the tilt `w ∝ u ⊙ exp(αa)`;
//! `aᵀw(α)` is increasing in `α` with derivative `Var_w(a)`, so `α` is a
//! one-dimensional monotone root.

use nalgebra::DVector;

use crate::diagnostics::kl_divergence;
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Instance, LinearConstraint, Weights};
use crate::numerics::find_root_monotone;
use crate::report::{SolveReport, Status, TraceEntry};

/// Default stopping tolerance for the cyclic schemes.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default cycle budget for the cyclic schemes.
pub const DEFAULT_MAX_CYCLES: usize = 10_000;
/// Window over which a non-improving Dykstra violation counts as a plateau.
pub const PLATEAU_WINDOW: usize = 50;
/// Relative accuracy of the one-dimensional tilt roots. Much tighter than the
/// cyclic tolerances so that the cycles, not the roots, limit accuracy; Brent
/// stops earlier if the bracket collapses to adjacent floats.
pub const PROJECTION_ROOT_TOL: f64 = 4.0 * f64::EPSILON;

fn lse(v: &DVector<f64>) -> f64 {
    let m = v.max();
    v.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m
}

fn normalize_log(mut v: DVector<f64>) -> DVector<f64> {
    let z = lse(&v);
    v.add_scalar_mut(-z);
    v
}

/// `aᵀ normalize(exp(log_u + αa))`.
fn tilted_mean(log_u: &DVector<f64>, a: &DVector<f64>, alpha: f64) -> f64 {
    let m = log_u
        .iter()
        .zip(a.iter())
        .map(|(l, x)| l + alpha * x)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (l, x) in log_u.iter().zip(a.iter()) {
        let e = (l + alpha * x - m).exp();
        num += e * x;
        den += e;
    }
    num / den
}

fn root_scale(a: &DVector<f64>, tau: f64) -> f64 {
    a.amax().max(tau.abs()).max(f64::MIN_POSITIVE)
}

/// Solves `aᵀ w(α) = τ` for the tilt of `log_u`, checking that an interior
/// solution exists.
fn solve_tilt(log_u: &DVector<f64>, a: &DVector<f64>, tau: f64, hint: f64) -> Result<f64> {
    let (min, max) = (a.min(), a.max());
    if max - min <= 1e-14 * a.amax() {
        return Err(Error::DegenerateDirection);
    }
    if !(tau > min && tau < max) {
        return Err(Error::TargetOutOfRange { tau, min, max });
    }
    let ftol = PROJECTION_ROOT_TOL * root_scale(a, tau);
    let hint = if hint.is_finite() { hint } else { 0.0 };
    find_root_monotone(|alpha| tilted_mean(log_u, a, alpha) - tau, hint, ftol)
}

fn check_direction(u: &Weights, a: &DVector<f64>) -> Result<()> {
    if a.len() != u.len() {
        return Err(Error::DimensionMismatch {
            what: "constraint direction",
            expected: u.len(),
            found: a.len(),
        });
    }
    if !u.is_strictly_positive() {
        return Err(Error::InvalidWeights("projection input must be strictly positive".into()));
    }
    Ok(())
}

/// KL projection of `u` onto `{aᵀw = τ}`; returns the weights and the tilt `α`.
pub fn project_hyperplane(u: &Weights, a: &DVector<f64>, tau: f64) -> Result<(Weights, f64)> {
    project_hyperplane_from(u, a, tau, 0.0)
}

/// As [`project_hyperplane`], with a starting guess for `α`.
pub fn project_hyperplane_from(u: &Weights, a: &DVector<f64>, tau: f64, hint: f64) -> Result<(Weights, f64)> {
    check_direction(u, a)?;
    let log_u = u.map(f64::ln);
    let (log_w, alpha) = hyperplane_log(&log_u, a, tau, hint)?;
    if alpha == 0.0 {
        return Ok((u.clone(), 0.0));
    }
    Ok((Weights::from_log(log_w), alpha))
}

fn hyperplane_log(log_u: &DVector<f64>, a: &DVector<f64>, tau: f64, hint: f64) -> Result<(DVector<f64>, f64)> {
    let (min, max) = (a.min(), a.max());
    if max - min <= 1e-14 * a.amax() {
        return Err(Error::DegenerateDirection);
    }
    if (tilted_mean(log_u, a, 0.0) - tau).abs() <= PROJECTION_ROOT_TOL * root_scale(a, tau) {
        return Ok((log_u.clone(), 0.0));
    }
    let alpha = solve_tilt(log_u, a, tau, hint)?;
    Ok((normalize_log(log_u + a * alpha), alpha))
}

/// KL projection of `u` onto `{aᵀw ≤ τ}`; returns the weights and `λ ≥ 0`
/// with `w ∝ u ⊙ exp(−λa)`.
pub fn project_halfspace(u: &Weights, a: &DVector<f64>, tau: f64) -> Result<(Weights, f64)> {
    check_direction(u, a)?;
    let log_u = u.map(f64::ln);
    let (log_w, lambda) = halfspace_log(&log_u, a, tau, 0.0)?;
    if lambda == 0.0 {
        return Ok((u.clone(), 0.0));
    }
    Ok((Weights::from_log(log_w), lambda))
}

fn halfspace_log(log_u: &DVector<f64>, a: &DVector<f64>, tau: f64, hint: f64) -> Result<(DVector<f64>, f64)> {
    let (min, max) = (a.min(), a.max());
    if tau < min || (tau == min && min < max) {
        return Err(Error::TargetOutOfRange { tau, min, max });
    }
    if tilted_mean(log_u, a, 0.0) <= tau {
        return Ok((log_u.clone(), 0.0));
    }
    let alpha = solve_tilt(log_u, a, tau, -hint)?;
    let lambda = (-alpha).max(0.0);
    Ok((normalize_log(log_u - a * lambda), lambda))
}

fn kl_to_benchmark(inst: &Instance, w: &Weights) -> f64 {
    kl_divergence(w, inst.benchmark())
}

/// Cyclic KL projections onto `aₖᵀw = τₖ`, starting from the benchmark.
///
/// `theta` in the report holds the accumulated tilt per constraint, so for
/// factor-column constraints it coincides with the Newton dual.
pub fn solve_ipf(
    inst: &Instance,
    constraints: &[LinearConstraint],
    tol: f64,
    max_cycles: usize,
) -> Result<SolveReport> {
    solve_ipf_observed(inst, constraints, tol, max_cycles, |_| {})
}

/// [`solve_ipf`] with a callback after every single projection.
pub fn solve_ipf_observed<F>(
    inst: &Instance,
    constraints: &[LinearConstraint],
    tol: f64,
    max_cycles: usize,
    mut observe: F,
) -> Result<SolveReport>
where
    F: FnMut(&Weights),
{
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let set = ConstraintSet::new(constraints.to_vec(), Vec::new());
    set.validate(inst.n_assets())?;

    let k = constraints.len();
    let mut w = inst.benchmark().clone();
    let mut theta = DVector::zeros(k);
    let mut last_alpha = vec![0.0; k];
    let mut trace = Vec::new();
    let mut cycles = 0;

    let mut violation = set.max_violation(&w);
    trace.push(TraceEntry {
        residual_norm: violation,
        step: 0.0,
        log_z: None,
        objective: kl_to_benchmark(inst, &w),
    });
    while violation > tol && cycles < max_cycles {
        for (j, c) in constraints.iter().enumerate() {
            let (next, alpha) = project_hyperplane_from(&w, &c.a, c.bound, last_alpha[j])?;
            theta[j] += alpha;
            last_alpha[j] = alpha;
            w = next;
            observe(&w);
        }
        cycles += 1;
        violation = set.max_violation(&w);
        trace.push(TraceEntry {
            residual_norm: violation,
            step: 1.0,
            log_z: None,
            objective: kl_to_benchmark(inst, &w),
        });
    }
    let status = if violation <= tol {
        Status::Converged
    } else {
        Status::MaxCycles
    };
    let gap = DVector::from_iterator(k, constraints.iter().map(|c| c.bound - c.value(&w)));
    Ok(SolveReport {
        weights: w,
        theta,
        residual: gap.clone(),
        exposure_gap: gap,
        iterations: cycles,
        trace,
        status,
    })
}

/// Iteration state of Bregman–Dykstra with multiplicative corrections.
///
/// Corrections are kept as logarithms; [`DykstraState::corrections`] returns
/// them in multiplicative form.
#[derive(Debug, Clone)]
pub struct DykstraState<'a> {
    sets: &'a ConstraintSet,
    log_w: DVector<f64>,
    log_q: Vec<DVector<f64>>,
    /// Latest tilt coefficient per set: `α` for equalities, `−λ` for half-spaces.
    multipliers: Vec<f64>,
    pub cycle_count: usize,
    pub violations: Vec<f64>,
}

impl<'a> DykstraState<'a> {
    pub fn new(prior: &Weights, sets: &'a ConstraintSet) -> Result<Self> {
        sets.validate(prior.len())?;
        if !prior.is_strictly_positive() {
            return Err(Error::InvalidWeights("prior must be strictly positive".into()));
        }
        let n = prior.len();
        Ok(Self {
            sets,
            log_w: prior.map(f64::ln),
            log_q: vec![DVector::zeros(n); sets.len()],
            multipliers: vec![0.0; sets.len()],
            cycle_count: 0,
            violations: sets.violations(prior.as_vector()),
        })
    }

    /// One pass over all sets in order. Returns the worst violation afterwards.
    pub fn cycle(&mut self) -> Result<f64> {
        for (j, (eq, c)) in self.sets.iter().enumerate() {
            let log_y = normalize_log(&self.log_w + &self.log_q[j]);
            let hint = self.multipliers[j];
            let (log_z, mult) = if eq {
                hyperplane_log(&log_y, &c.a, c.bound, hint)?
            } else {
                let (z, lambda) = halfspace_log(&log_y, &c.a, c.bound, -hint)?;
                (z, -lambda)
            };
            self.log_q[j] = &self.log_w + &self.log_q[j] - &log_z;
            self.log_w = log_z;
            self.multipliers[j] = mult;
        }
        self.cycle_count += 1;
        let w = self.weights();
        self.violations = self.sets.violations(w.as_vector());
        Ok(self.max_violation())
    }

    pub fn weights(&self) -> Weights {
        Weights::from_log(self.log_w.clone())
    }

    pub fn corrections(&self) -> Vec<DVector<f64>> {
        self.log_q.iter().map(|q| q.map(f64::exp)).collect()
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

/// Bregman–Dykstra from the benchmark over `sets` (equalities first, then
/// half-spaces), stopping when the worst per-set violation is at most `tol`.
pub fn solve_dykstra(inst: &Instance, sets: &ConstraintSet, tol: f64, max_cycles: usize) -> Result<SolveReport> {
    solve_dykstra_from(inst.benchmark(), sets, tol, max_cycles)
}

/// Bregman–Dykstra projection of an arbitrary strictly positive prior.
pub fn solve_dykstra_from(prior: &Weights, sets: &ConstraintSet, tol: f64, max_cycles: usize) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let mut state = DykstraState::new(prior, sets)?;
    let mut history = vec![state.max_violation()];
    let mut trace = vec![TraceEntry {
        residual_norm: state.max_violation(),
        step: 0.0,
        log_z: None,
        objective: 0.0,
    }];
    let status = loop {
        if state.cycle_count >= max_cycles {
            break Status::MaxCycles;
        }
        let v = state.cycle()?;
        history.push(v);
        trace.push(TraceEntry {
            residual_norm: v,
            step: 1.0,
            log_z: None,
            objective: kl_divergence(&state.weights(), prior),
        });
        if v <= tol {
            break Status::Converged;
        }
        let c = state.cycle_count;
        if c >= PLATEAU_WINDOW && v >= (1.0 - 1e-3) * history[c - PLATEAU_WINDOW] {
            break Status::EmptyIntersectionSuspected;
        }
    };
    let w = state.weights();
    let gap = DVector::from_iterator(sets.len(), sets.iter().map(|(_, c)| c.bound - c.value(&w)));
    Ok(SolveReport {
        theta: DVector::from_column_slice(state.multipliers()),
        weights: w,
        residual: gap.clone(),
        exposure_gap: gap,
        iterations: state.cycle_count,
        trace,
        status,
    })
}
