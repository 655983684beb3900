//! Verification utilities: KL evaluation, KKT residuals and a primal oracle.
//!
//! The oracle works on the primal problem directly and shares no code with
//! the dual or projection solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Instance, Weights};

/// `Σ wᵢ log(wᵢ/bᵢ)` with `0·log 0 = 0`.
pub fn kl_divergence(w: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter()
        .zip(b.iter())
        .map(|(&wi, &bi)| if wi > 0.0 { wi * (wi / bi).ln() } else { 0.0 })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone)]
pub struct KktReport {
    /// `t − Xᵀw`; empty when no targets were given.
    pub exposure_residual: DVector<f64>,
    /// Half-width of the range of `log(wᵢ/bᵢ) − θᵀxᵢ` after removing the
    /// fitted constraint multipliers. Assets with zero weight are skipped.
    pub stationarity_spread: f64,
    pub kl_value: f64,
    /// `aᵀw − τ` per half-space; nonpositive when feasible.
    pub inequality_slacks: Vec<f64>,
    /// `aᵀw − τ` per extra equality row.
    pub equality_residuals: Vec<f64>,
    /// Factor multipliers used for the spread: the given ones or a least
    /// squares fit.
    pub theta: DVector<f64>,
}

impl KktReport {
    pub fn max_exposure_residual(&self) -> f64 {
        self.exposure_residual.amax()
    }

    pub fn max_constraint_violation(&self) -> f64 {
        let eq = self.equality_residuals.iter().map(|r| r.abs());
        let ineq = self.inequality_slacks.iter().map(|s| s.max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }

    pub fn passes(&self, spread_tol: f64, residual_tol: f64) -> bool {
        self.stationarity_spread <= spread_tol
            && self.max_exposure_residual() <= residual_tol
            && self.max_constraint_violation() <= residual_tol
    }
}

/// Half-spaces with `|aᵀw − τ|` below this (scaled by `max(1, |τ|)`) enter the
/// stationarity fit.
pub const ACTIVE_TOL: f64 = 1e-8;

pub fn kkt_check(
    inst: &Instance,
    w: &DVector<f64>,
    theta: Option<&DVector<f64>>,
    targets: Option<&DVector<f64>>,
    sets: Option<&ConstraintSet>,
) -> Result<KktReport> {
    let n = inst.n_assets();
    let k = inst.n_factors();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: n,
            found: w.len(),
        });
    }
    if let Some(th) = theta {
        if th.len() != k {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: k,
                found: th.len(),
            });
        }
    }
    if let Some(t) = targets {
        inst.check_targets(t)?;
    }
    if let Some(s) = sets {
        s.validate(n)?;
    }
    let b = inst.benchmark();
    let exposure = inst.exposure_of(w);
    let exposure_residual = targets.map_or_else(|| DVector::zeros(0), |t| t - &exposure);

    let empty = ConstraintSet::default();
    let sets = sets.unwrap_or(&empty);
    let equality_residuals: Vec<f64> = sets.equalities.iter().map(|c| c.value(w) - c.bound).collect();
    let inequality_slacks: Vec<f64> = sets.halfspaces.iter().map(|c| c.value(w) - c.bound).collect();

    let support: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let mut rhs = DVector::from_iterator(support.len(), support.iter().map(|&i| (w[i] / b[i]).ln()));
    if let Some(th) = theta {
        for (r, &i) in rhs.iter_mut().zip(&support) {
            *r -= inst.row(i).iter().zip(th.iter()).map(|(x, t)| x * t).sum::<f64>();
        }
    }

    let mut columns: Vec<DVector<f64>> = Vec::new();
    if theta.is_none() {
        for j in 0..k {
            columns.push(DVector::from_iterator(support.len(), support.iter().map(|&i| inst.row(i)[j])));
        }
    }
    let active = sets.halfspaces.iter().zip(&inequality_slacks).filter(|(c, s)| s.abs() <= ACTIVE_TOL * c.bound.abs().max(1.0));
    for c in sets.equalities.iter().chain(active.map(|(c, _)| c)) {
        columns.push(DVector::from_iterator(support.len(), support.iter().map(|&i| c.a[i])));
    }

    let (fitted, residual) = if columns.is_empty() || support.is_empty() {
        (DVector::zeros(0), rhs)
    } else {
        columns.push(DVector::from_element(support.len(), 1.0));
        let design = DMatrix::from_columns(&columns);
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|_| Error::SingularSystem)?;
        let res = &rhs - &design * &coef;
        (coef, res)
    };

    let stationarity_spread = if residual.is_empty() {
        0.0
    } else {
        (residual.max() - residual.min()) / 2.0
    };
    let theta = match theta {
        Some(th) => th.clone(),
        None => fitted.rows(0, k).into_owned(),
    };

    Ok(KktReport {
        exposure_residual,
        stationarity_spread,
        kl_value: kl_divergence(w, b),
        inequality_slacks,
        equality_residuals,
        theta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMethod {
    /// Augmented Lagrangian around accelerated projected gradient on the simplex.
    ProjectedGradient,
    /// Exhaustive search over `{k/resolution}` compositions; `N ≤ 4` only.
    Grid { resolution: usize },
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub method: OracleMethod,
    /// Budget of inner gradient iterations across all outer rounds.
    pub max_iter: usize,
    /// Final constraint violation allowed.
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            method: OracleMethod::ProjectedGradient,
            max_iter: 1_000_000,
            tol: 1e-10,
        }
    }
}

struct Primal {
    eq: Vec<(DVector<f64>, f64)>,
    ineq: Vec<(DVector<f64>, f64)>,
}

impl Primal {
    fn build(inst: &Instance, targets: Option<&DVector<f64>>, sets: Option<&ConstraintSet>) -> Result<Self> {
        let n = inst.n_assets();
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        if let Some(t) = targets {
            inst.check_targets(t)?;
            for j in 0..inst.n_factors() {
                eq.push((inst.exposures().column(j).into_owned(), t[j]));
            }
        }
        if let Some(s) = sets {
            s.validate(n)?;
            eq.extend(s.equalities.iter().map(|c| (c.a.clone(), c.bound)));
            ineq.extend(s.halfspaces.iter().map(|c| (c.a.clone(), c.bound)));
        }
        Ok(Self { eq, ineq })
    }

    fn violation(&self, w: &DVector<f64>) -> f64 {
        let e = self.eq.iter().map(|(a, c)| (a.dot(w) - c).abs());
        let i = self.ineq.iter().map(|(a, c)| (a.dot(w) - c).max(0.0));
        e.chain(i).fold(0.0, f64::max)
    }
}

/// Minimizes `KL(w‖b)` subject to the targets and constraint sets without
/// any dual machinery. Meant for small instances.
pub fn brute_force_oracle(
    inst: &Instance,
    targets: Option<&DVector<f64>>,
    sets: Option<&ConstraintSet>,
    cfg: &OracleConfig,
) -> Result<Weights> {
    let primal = Primal::build(inst, targets, sets)?;
    match cfg.method {
        OracleMethod::ProjectedGradient => augmented_lagrangian(inst.benchmark(), &primal, cfg),
        OracleMethod::Grid { resolution } => grid_search(inst.benchmark(), &primal, resolution),
    }
}

const FLOOR: f64 = 1e-15;

/// Projection onto `{x ≥ FLOOR, Σx = 1}`.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mass = 1.0 - n as f64 * FLOOR;
    let mut u: Vec<f64> = v.iter().map(|x| x - FLOOR).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let s = (cum - mass) / (j + 1) as f64;
        if uj - s > 0.0 {
            shift = s;
        }
    }
    v.map(|x| (x - FLOOR - shift).max(0.0) + FLOOR)
}

struct Lagrangian<'a> {
    b: &'a DVector<f64>,
    p: &'a Primal,
    y: Vec<f64>,
    z: Vec<f64>,
    rho: f64,
}

impl Lagrangian<'_> {
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = w.zip_map(self.b, |wi, bi| (wi / bi).ln() + 1.0);
        for ((a, c), y) in self.p.eq.iter().zip(&self.y) {
            g.axpy(y + self.rho * (a.dot(w) - c), a, 1.0);
        }
        for ((a, c), z) in self.p.ineq.iter().zip(&self.z) {
            let m = (z + self.rho * (a.dot(w) - c)).max(0.0);
            if m > 0.0 {
                g.axpy(m, a, 1.0);
            }
        }
        g
    }

    fn update_multipliers(&mut self, w: &DVector<f64>) {
        for ((a, c), y) in self.p.eq.iter().zip(self.y.iter_mut()) {
            *y += self.rho * (a.dot(w) - c);
        }
        for ((a, c), z) in self.p.ineq.iter().zip(self.z.iter_mut()) {
            *z = (*z + self.rho * (a.dot(w) - c)).max(0.0);
        }
    }
}

/// FISTA with backtracking and gradient restarts, stopped once a gradient
/// step moves no coordinate by more than `tol`. Returns the number of
/// iterations spent, or `None` if the budget ran out.
///
/// Backtracking tests `(∇f(c) − ∇f(y))ᵀd ≤ L‖d‖²/2`, which implies the usual
/// sufficient-decrease bound for convex `f` and, unlike function values,
/// stays informative at rounding level.
fn minimize_inner(lag: &Lagrangian, w: &mut DVector<f64>, lip: &mut f64, tol: f64, budget: usize) -> Option<usize> {
    let mut x = w.clone();
    let mut yk = w.clone();
    let mut tk: f64 = 1.0;
    for it in 0..budget {
        let g = lag.gradient(&yk);
        let mut l = (*lip * 0.5).max(1e-12);
        let cand = loop {
            let c = project_simplex(&(&yk - &g * (1.0 / l)));
            let d = &c - &yk;
            let curvature = (lag.gradient(&c) - &g).dot(&d);
            if curvature <= 0.5 * l * d.norm_squared() || l > 1e30 {
                break c;
            }
            l *= 2.0;
        };
        *lip = l;
        let step = (&cand - &yk).amax();
        if step <= tol {
            *w = cand;
            return Some(it + 1);
        }
        if (&yk - &cand).dot(&(&cand - &x)) > 0.0 {
            tk = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        yk = project_simplex(&(&cand + (&cand - &x) * ((tk - 1.0) / t_next)));
        tk = t_next;
        x = cand;
    }
    *w = x;
    None
}

fn augmented_lagrangian(b: &Weights, p: &Primal, cfg: &OracleConfig) -> Result<Weights> {
    let bv = b.as_vector();
    let mut w = bv.clone();
    if p.eq.is_empty() && p.ineq.is_empty() {
        return Ok(b.clone());
    }
    let mut lag = Lagrangian {
        b: bv,
        p,
        y: vec![0.0; p.eq.len()],
        z: vec![0.0; p.ineq.len()],
        rho: 1.0,
    };
    let mut lip = 1.0;
    let mut used = 0;
    let mut last_violation = f64::INFINITY;
    let mut inner_tol = 1e-6;
    loop {
        let remaining = cfg.max_iter.saturating_sub(used);
        let spent = minimize_inner(&lag, &mut w, &mut lip, inner_tol, remaining);
        used += spent.unwrap_or(remaining);
        let violation = p.violation(&w);
        if spent.is_none() {
            return Err(Error::OracleNotConverged {
                iterations: used,
                violation,
            });
        }
        if violation <= cfg.tol && inner_tol <= 1e-14 {
            let w = w.map(|x| if x <= FLOOR { 0.0 } else { x });
            return Weights::new(&w / w.sum());
        }
        lag.update_multipliers(&w);
        if violation > 0.25 * last_violation && lag.rho < 1e4 {
            lag.rho *= 10.0;
        }
        last_violation = violation;
        inner_tol = (inner_tol * 0.1).max(1e-14);
    }
}

fn grid_search(b: &Weights, p: &Primal, resolution: usize) -> Result<Weights> {
    let n = b.len();
    if n > 4 {
        return Err(Error::InvalidConfig(format!("grid oracle supports at most 4 assets, got {n}")));
    }
    if resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be positive".into()));
    }
    let band = |a: &DVector<f64>| (a.max() - a.min()) / (2 * resolution) as f64 + 1e-12;
    let eq_band: Vec<f64> = p.eq.iter().map(|(a, _)| band(a)).collect();
    let ineq_band: Vec<f64> = p.ineq.iter().map(|(a, _)| band(a)).collect();

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut least_violation = f64::INFINITY;
    let mut count = 0usize;
    let mut parts = vec![0usize; n];
    enumerate(&mut parts, 0, resolution, &mut |parts| {
        count += 1;
        let w = DVector::from_iterator(n, parts.iter().map(|&k| k as f64 / resolution as f64));
        let mut worst: f64 = 0.0;
        let mut inside = true;
        for ((a, c), tol) in p.eq.iter().zip(&eq_band) {
            let r = (a.dot(&w) - c).abs();
            worst = worst.max(r);
            inside &= r <= *tol;
        }
        for ((a, c), tol) in p.ineq.iter().zip(&ineq_band) {
            let r = (a.dot(&w) - c).max(0.0);
            worst = worst.max(r);
            inside &= r <= *tol;
        }
        least_violation = least_violation.min(worst);
        if inside {
            let kl = kl_divergence(&w, b);
            if best.as_ref().is_none_or(|(v, _)| kl < *v) {
                best = Some((kl, w));
            }
        }
    });
    match best {
        Some((_, w)) => Weights::new(w),
        None => Err(Error::OracleNotConverged {
            iterations: count,
            violation: least_violation,
        }),
    }
}

fn enumerate(parts: &mut Vec<usize>, pos: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == parts.len() {
        parts[pos] = left;
        visit(parts);
        return;
    }
    for k in 0..=left {
        parts[pos] = k;
        enumerate(parts, pos + 1, left - k, visit);
    }
}
