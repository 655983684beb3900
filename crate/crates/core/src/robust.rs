//! Proximal-gradient ascent on the robust dual.
//!
//! For `Xᵀw ∈ t₀ + 𝒰` with `𝒰` a centered ℓ2 ball or ℓ∞ box, the dual is
//! `f(θ) − σ_𝒰(θ)` with smooth `f(θ) = θᵀt₀ − log Z(θ)` and support function
//! `σ_𝒰` (`ρ‖θ‖₂` or `ρ‖θ‖₁`). The prox of `ησ_𝒰` follows from the Euclidean
//! projection onto `𝒰` by Moreau's decomposition.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::numerics::{log_partition, tilted_weights};
use crate::report::{SolveReport, Status, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustSet {
    L2Ball { rho: f64 },
    LinfBox { rho: f64 },
}

impl RobustSet {
    pub fn rho(&self) -> f64 {
        match *self {
            RobustSet::L2Ball { rho } | RobustSet::LinfBox { rho } => rho,
        }
    }

    /// `σ_𝒰(θ) = sup_{u∈𝒰} θᵀu`.
    pub fn support(&self, theta: &DVector<f64>) -> f64 {
        match *self {
            RobustSet::L2Ball { rho } => rho * theta.norm(),
            RobustSet::LinfBox { rho } => rho * theta.lp_norm(1),
        }
    }

    /// Whether `u` lies in the set, up to `tol`.
    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        match *self {
            RobustSet::L2Ball { rho } => u.norm() <= rho + tol,
            RobustSet::LinfBox { rho } => u.amax() <= rho + tol,
        }
    }

    fn validate(&self) -> Result<()> {
        let rho = self.rho();
        if rho >= 0.0 && rho.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("rho must be nonnegative and finite, got {rho}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxConfig {
    /// Initial step; `None` uses `1/R²` with `R` the largest centered row norm.
    pub step: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            step: None,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

/// Euclidean projection onto `𝒰`.
pub fn euclid_project(set: RobustSet, z: &DVector<f64>) -> DVector<f64> {
    match set {
        RobustSet::L2Ball { rho } => {
            let n = z.norm();
            if n <= rho {
                z.clone()
            } else {
                z * (rho / n)
            }
        }
        RobustSet::LinfBox { rho } => z.map(|v| v.clamp(-rho, rho)),
    }
}

/// `prox_{ησ_𝒰}(z) = z − η Π_𝒰(z/η)`.
///
/// Coordinates absorbed by the set come back as exact zeros.
pub fn prox_support(set: RobustSet, z: &DVector<f64>, eta: f64) -> DVector<f64> {
    let scaled = z / eta;
    let mut out = z - euclid_project(set, &scaled) * eta;
    match set {
        RobustSet::L2Ball { rho } => {
            if scaled.norm() <= rho {
                out.fill(0.0);
            }
        }
        RobustSet::LinfBox { rho } => {
            for (o, s) in out.iter_mut().zip(scaled.iter()) {
                if s.abs() <= rho {
                    *o = 0.0;
                }
            }
        }
    }
    out
}

/// `g − u*` for the subgradient `u* ∈ ∂σ_𝒰(θ)` nearest to `g`; its norm is
/// the stationarity distance.
pub fn subgradient_residual(set: RobustSet, theta: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    match set {
        RobustSet::L2Ball { rho } => {
            let n = theta.norm();
            if n == 0.0 {
                g - euclid_project(set, g)
            } else {
                g - theta * (rho / n)
            }
        }
        RobustSet::LinfBox { rho } => DVector::from_iterator(
            g.len(),
            g.iter().zip(theta.iter()).map(|(&gk, &tk)| {
                if tk == 0.0 {
                    gk - gk.clamp(-rho, rho)
                } else {
                    gk - rho * tk.signum()
                }
            }),
        ),
    }
}

/// Largest row norm of the exposures centered at the benchmark mean; the
/// curvature of `log Z` never exceeds its square.
fn curvature_bound(inst: &Instance) -> f64 {
    let mu = inst.benchmark_exposure();
    (0..inst.n_assets())
        .map(|i| {
            inst.row(i)
                .iter()
                .zip(mu.iter())
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Proximal-gradient ascent on `θᵀt₀ − log Z(θ) − σ_𝒰(θ)` from `θ = 0`.
pub fn solve_robust(inst: &Instance, t0: &DVector<f64>, set: RobustSet, cfg: &ProxConfig) -> Result<SolveReport> {
    set.validate()?;
    inst.check_targets(t0)?;
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let mut eta = match cfg.step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidConfig(format!("step must be positive, got {s}"))),
        None => {
            let r2 = curvature_bound(inst);
            if r2 > 0.0 {
                1.0 / r2
            } else {
                1.0
            }
        }
    };

    let k = inst.n_factors();
    let smooth = |theta: &DVector<f64>, log_z: f64| theta.dot(t0) - log_z;

    let mut theta = DVector::zeros(k);
    let (mut w, mut log_z) = tilted_weights(inst, &theta);
    let mut g = t0 - inst.exposure_of(&w);
    let mut f = smooth(&theta, log_z);
    let mut residual = subgradient_residual(set, &theta, &g);
    let mut trace = vec![TraceEntry {
        residual_norm: residual.norm(),
        step: 0.0,
        log_z: Some(log_z),
        objective: f - set.support(&theta),
    }];
    let mut iterations = 0;

    let status = loop {
        if residual.norm() <= cfg.tol {
            break Status::Converged;
        }
        if iterations >= cfg.max_iter {
            break Status::MaxIter;
        }
        let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
        theta = loop {
            let cand = prox_support(set, &(&theta + &g * eta), eta);
            let lz = log_partition(inst, &cand);
            let diff = &cand - &theta;
            let model = f + g.dot(&diff) - diff.norm_squared() / (2.0 * eta);
            if smooth(&cand, lz) >= model - slack || eta < 1e-300 {
                break cand;
            }
            eta *= 0.5;
        };
        (w, log_z) = tilted_weights(inst, &theta);
        g = t0 - inst.exposure_of(&w);
        f = smooth(&theta, log_z);
        residual = subgradient_residual(set, &theta, &g);
        iterations += 1;
        trace.push(TraceEntry {
            residual_norm: residual.norm(),
            step: eta,
            log_z: Some(log_z),
            objective: f - set.support(&theta),
        });
    };

    Ok(SolveReport {
        exposure_gap: g,
        weights: w,
        theta,
        residual,
        iterations,
        trace,
        status,
    })
}
