//! Damped Newton ascent on the equality and elastic duals.
//!
//! The equality dual is `L(θ) = θᵀt − log Z(θ)`; the elastic dual subtracts
//! `‖θ‖²/(2λ)`. Both share gradient `t − μ(θ) − θ/λ` and negative Hessian
//! `Σ(θ) + I/λ`, with `1/λ = 0` in the equality case.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::numerics::{log_partition, regularized_solve, tilt, DualPoint};
use crate::report::{SolveReport, Status, TraceEntry};

#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Stop once `‖∇L‖₂ ≤ tol`.
    pub tol: f64,
    /// Armijo sufficient-increase constant.
    pub armijo_c: f64,
    /// Backtracking factor.
    pub backtrack: f64,
    pub max_iter: usize,
    /// Warm start; `None` starts at zero.
    pub theta0: Option<DVector<f64>>,
    /// `‖θ‖₂` beyond which a persistent gradient is read as infeasibility.
    pub divergence_theta_norm: f64,
    /// First ridge is `max(ridge_floor, ridge_scale · tr(Σ)/K)`.
    pub ridge_floor: f64,
    pub ridge_scale: f64,
    /// Ridge escalation stops above `ridge_cap_scale · tr(Σ)/K`.
    pub ridge_cap_scale: f64,
    /// Smallest step tried before the line search is declared stalled.
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_iter: 200,
            theta0: None,
            divergence_theta_norm: 1e3,
            ridge_floor: 1e-10,
            ridge_scale: 1e-6,
            ridge_cap_scale: 1e-2,
            min_step: 1e-12,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.armijo_c > 1e-6 && self.armijo_c < 1e-1) {
            return bad("armijo constant must lie in (1e-6, 1e-1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return bad("minimum step must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Maximizes the equality dual. The weights are the KL projection of the
/// benchmark onto `{w : Xᵀw = t}` when the status is `Converged`.
pub fn solve_equality(inst: &Instance, t: &DVector<f64>, cfg: &NewtonConfig) -> Result<SolveReport> {
    ascend(inst, t, 0.0, cfg)
}

/// Maximizes the elastic dual for `KL(w‖b) + λ/2 ‖Xᵀw − t‖²`.
pub fn solve_elastic(
    inst: &Instance,
    t: &DVector<f64>,
    lambda_soft: f64,
    cfg: &NewtonConfig,
) -> Result<SolveReport> {
    if !(lambda_soft > 0.0) || lambda_soft.is_nan() {
        return Err(Error::InvalidConfig(format!(
            "lambda_soft must be positive, got {lambda_soft}"
        )));
    }
    ascend(inst, t, 1.0 / lambda_soft, cfg)
}

fn dual_objective(theta: &DVector<f64>, t: &DVector<f64>, log_z: f64, penalty: f64) -> f64 {
    theta.dot(t) - log_z - 0.5 * penalty * theta.norm_squared()
}

/// Newton direction for `(Σ + pI)Δ = g`, escalating a ridge on failure.
pub(crate) fn newton_direction(
    cov: &DMatrix<f64>,
    g: &DVector<f64>,
    penalty: f64,
    cfg: &NewtonConfig,
) -> Option<DVector<f64>> {
    let k = cov.nrows();
    let accept = |d: &DVector<f64>| g.dot(d) > 0.0 || g.iter().all(|v| *v == 0.0);
    if let Ok(d) = regularized_solve(cov, g, penalty) {
        if accept(&d) {
            return Some(d);
        }
    }
    let scale = cov.trace() / k.max(1) as f64;
    let mut delta = cfg.ridge_floor.max(cfg.ridge_scale * scale);
    let cap = delta.max(cfg.ridge_cap_scale * scale);
    while delta <= cap {
        if let Ok(d) = regularized_solve(cov, g, penalty + delta) {
            if accept(&d) {
                log::debug!("newton step needed ridge {delta:.3e}");
                return Some(d);
            }
        }
        delta *= 10.0;
    }
    None
}

struct LineSearch<'a> {
    inst: &'a Instance,
    t: &'a DVector<f64>,
    penalty: f64,
    cfg: &'a NewtonConfig,
}

impl LineSearch<'_> {
    /// Largest `βᵐ ≥ min_step` meeting the Armijo condition, with a few ulps of
    /// slack so that steps near the optimum are not rejected on rounding noise.
    fn run(&self, theta: &DVector<f64>, obj: f64, g: &DVector<f64>, dir: &DVector<f64>) -> Option<f64> {
        let slope = g.dot(dir);
        // L is a difference of θᵀt and log Z, so its rounding error scales with
        // those terms rather than with |L|.
        let scale = 2.0 * theta.dot(self.t).abs() + obj.abs() + self.penalty * theta.norm_squared();
        let slack = 8.0 * f64::EPSILON * scale.max(1.0);
        let mut alpha = 1.0;
        while alpha >= self.cfg.min_step {
            let cand = theta + dir * alpha;
            let lz = log_partition(self.inst, &cand);
            let val = dual_objective(&cand, self.t, lz, self.penalty);
            if val.is_finite() && val >= obj + self.cfg.armijo_c * alpha * slope - slack {
                return Some(alpha);
            }
            alpha *= self.cfg.backtrack;
        }
        None
    }
}

fn ascend(inst: &Instance, t: &DVector<f64>, penalty: f64, cfg: &NewtonConfig) -> Result<SolveReport> {
    cfg.validate()?;
    inst.check_targets(t)?;
    let k = inst.n_factors();
    let mut theta = match &cfg.theta0 {
        Some(t0) if t0.len() != k => {
            return Err(Error::DimensionMismatch {
                what: "initial dual",
                expected: k,
                found: t0.len(),
            })
        }
        Some(t0) => t0.clone(),
        None => DVector::zeros(k),
    };
    let search = LineSearch {
        inst,
        t,
        penalty,
        cfg,
    };

    let mut point = tilt(inst, &theta);
    let mut obj = dual_objective(&theta, t, point.log_z, penalty);
    let mut trace = Vec::new();
    let mut step = 0.0;
    let mut iterations = 0;

    let status = loop {
        let g = t - &point.mean - &theta * penalty;
        let gnorm = g.norm();
        trace.push(TraceEntry {
            residual_norm: gnorm,
            step,
            log_z: Some(point.log_z),
            objective: obj,
        });
        if gnorm <= cfg.tol {
            if penalty == 0.0 && escaping_to_boundary(&point, &g) {
                break Status::DivergedInfeasible;
            }
            break Status::Converged;
        }
        if penalty == 0.0 && theta.norm() > cfg.divergence_theta_norm && gnorm > 1e3 * cfg.tol {
            break Status::DivergedInfeasible;
        }
        if iterations >= cfg.max_iter {
            break Status::MaxIter;
        }
        let Some(dir) = newton_direction(&point.cov, &g, penalty, cfg) else {
            break Status::SingularSystem;
        };
        let (dir, alpha) = match search.run(&theta, obj, &g, &dir) {
            Some(a) => (dir, a),
            None => match search.run(&theta, obj, &g, &g) {
                Some(a) => {
                    log::debug!("newton line search stalled; took a gradient step");
                    (g.clone(), a)
                }
                None => break Status::MaxIter,
            },
        };
        theta += dir * alpha;
        point = tilt(inst, &theta);
        obj = dual_objective(&theta, t, point.log_z, penalty);
        step = alpha;
        iterations += 1;
    };

    let exposure_gap = t - &point.mean;
    let residual = &exposure_gap - &theta * penalty;
    Ok(SolveReport {
        weights: point.weights,
        theta,
        residual,
        exposure_gap,
        iterations,
        trace,
        status,
    })
}

/// At a boundary target the gradient vanishes only because the tilt piles all
/// mass onto a face, while the Newton step keeps a fixed length. At an interior
/// optimum the step shrinks with the gradient.
///
/// Gradient components at rounding level are ignored, so exact null
/// directions of the covariance (an intercept column, say) do not count.
fn escaping_to_boundary(point: &DualPoint, g: &DVector<f64>) -> bool {
    let noise = 1e-13 * point.mean.amax().max(g.amax()).max(1.0);
    let eig = SymmetricEigen::new(point.cov.clone());
    let top = eig.eigenvalues.amax();
    let mut step2 = 0.0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let c = eig.eigenvectors.column(i).dot(g);
        if c.abs() <= noise {
            continue;
        }
        if lam <= f64::EPSILON * top {
            return true;
        }
        step2 += (c / lam).powi(2);
    }
    step2.sqrt() > 1e-3 * point.theta.norm().max(1.0)
}

/// Derivatives of the optimal dual and weights with respect to the targets.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// `∂θ*/∂t`, `K × K`.
    pub dtheta_dt: DMatrix<f64>,
    /// `∂w*/∂t`, `N × K`.
    pub dw_dt: DMatrix<f64>,
}

/// Relative eigenvalue threshold below which the covariance counts as singular.
pub const SINGULAR_COV_TOL: f64 = 1e-12;

/// `∂θ/∂t = (Σ + I/λ)⁻¹` and `∂w/∂t = diag(w)(X − 1μᵀ) ∂θ/∂t` at an optimum.
/// Pass `lambda_soft = None` for the equality problem.
pub fn sensitivity(inst: &Instance, point: &DualPoint, lambda_soft: Option<f64>) -> Result<Sensitivity> {
    let k = inst.n_factors();
    if point.theta.len() != k || point.weights.len() != inst.n_assets() {
        return Err(Error::DimensionMismatch {
            what: "dual point",
            expected: k,
            found: point.theta.len(),
        });
    }
    let mut m = point.cov.clone();
    match lambda_soft {
        Some(l) if !(l > 0.0) => {
            return Err(Error::InvalidConfig(format!("lambda_soft must be positive, got {l}")))
        }
        Some(l) => {
            for i in 0..k {
                m[(i, i)] += 1.0 / l;
            }
        }
        None => {
            let eig = SymmetricEigen::new(m.clone());
            let top = eig.eigenvalues.amax();
            let small: Vec<usize> = (0..k)
                .filter(|&i| eig.eigenvalues[i] <= SINGULAR_COV_TOL * top.max(f64::MIN_POSITIVE))
                .collect();
            if !small.is_empty() {
                return Err(Error::SingularCovariance {
                    null_space: eig.eigenvectors.select_columns(small.iter()),
                });
            }
        }
    }
    let dtheta_dt = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularSystem)?;
    let mut centered = DMatrix::zeros(inst.n_assets(), k);
    for i in 0..inst.n_assets() {
        let wi = point.weights[i];
        for (j, x) in inst.row(i).iter().enumerate() {
            centered[(i, j)] = wi * (x - point.mean[j]);
        }
    }
    let dw_dt = centered * &dtheta_dt;
    Ok(Sensitivity { dtheta_dt, dw_dt })
}
