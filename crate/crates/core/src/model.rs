//! Problem data: benchmark, exposures, targets and linear constraint sets.
//!
//! An [`Instance`] is immutable once built. All the normalizations here
//! (column shifts, intercept removal, the multi-period prior blend) return
//! new values rather than mutating their inputs.

use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Simplex membership tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Inputs closer than this to normalized are rescaled with a warning.
pub const RENORMALIZE_TOL: f64 = 1e-8;
/// Relative tolerance used to detect constant (intercept) exposure columns.
pub const INTERCEPT_TOL: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(DVector<f64>);

impl Weights {
    /// Checks nonnegativity and normalization. Vectors whose sum is within
    /// [`RENORMALIZE_TOL`] of one are rescaled; anything further off is rejected.
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeights(format!("entry {i} is {v}")));
        }
        let sum = w.sum();
        let dev = (sum - 1.0).abs();
        if dev <= SIMPLEX_TOL {
            Ok(Self(w))
        } else if dev <= RENORMALIZE_TOL {
            log::warn!("weights sum to {sum:.17}; renormalizing");
            Ok(Self(w / sum))
        } else {
            Err(Error::InvalidWeights(format!("entries sum to {sum}, not 1")))
        }
    }

    /// Divides a nonnegative vector with positive sum by its sum.
    pub(crate) fn normalize(mut w: DVector<f64>) -> Self {
        let sum = w.sum();
        debug_assert!(sum > 0.0 && sum.is_finite());
        w /= sum;
        Self(w)
    }

    /// Builds weights from log-weights known up to an additive constant.
    pub(crate) fn from_log(mut logw: DVector<f64>) -> Self {
        let m = logw.max();
        logw.apply(|v| *v = (*v - m).exp());
        Self::normalize(logw)
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn max(&self) -> f64 {
        self.0.max()
    }
}

impl Deref for Weights {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// A single invariant broken by instance data.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoAssets,
    NoFactors,
    TooManyFactors { n_assets: usize, n_factors: usize },
    RowCountMismatch { benchmark: usize, exposures: usize },
    BenchmarkNotPositive { index: usize, value: f64 },
    BenchmarkNotNormalized { sum: f64 },
    NonFiniteExposure { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoAssets => write!(f, "no assets"),
            Violation::NoFactors => write!(f, "no factors"),
            Violation::TooManyFactors {
                n_assets,
                n_factors,
            } => write!(f, "{n_factors} factors exceed {n_assets} assets"),
            Violation::RowCountMismatch {
                benchmark,
                exposures,
            } => write!(
                f,
                "benchmark has {benchmark} entries but exposures have {exposures} rows"
            ),
            Violation::BenchmarkNotPositive { index, value } => write!(
                f,
                "benchmark not strictly positive (entry {index} is {value})"
            ),
            Violation::BenchmarkNotNormalized { sum } => {
                write!(f, "benchmark sum ≠ 1 (sum is {sum})")
            }
            Violation::NonFiniteExposure { row, col } => {
                write!(f, "non-finite exposure at row {row}, column {col}")
            }
        }
    }
}

/// Lists every broken invariant of the raw instance data.
///
/// A benchmark whose sum is off by at most [`RENORMALIZE_TOL`] is accepted;
/// [`Instance::new`] rescales it.
pub fn validate_instance(
    benchmark: &DVector<f64>,
    exposures: &DMatrix<f64>,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let n = benchmark.len();
    let k = exposures.ncols();
    if n == 0 {
        out.push(Violation::NoAssets);
    }
    if k == 0 {
        out.push(Violation::NoFactors);
    }
    if k > n && n > 0 {
        out.push(Violation::TooManyFactors {
            n_assets: n,
            n_factors: k,
        });
    }
    if exposures.nrows() != n {
        out.push(Violation::RowCountMismatch {
            benchmark: n,
            exposures: exposures.nrows(),
        });
    }
    for (i, &b) in benchmark.iter().enumerate() {
        if !(b > 0.0 && b.is_finite()) {
            out.push(Violation::BenchmarkNotPositive { index: i, value: b });
        }
    }
    let sum = benchmark.sum();
    if n > 0 && !((sum - 1.0).abs() <= RENORMALIZE_TOL) {
        out.push(Violation::BenchmarkNotNormalized { sum });
    }
    for c in 0..exposures.ncols() {
        for r in 0..exposures.nrows() {
            if !exposures[(r, c)].is_finite() {
                out.push(Violation::NonFiniteExposure { row: r, col: c });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Benchmark weights and an `N × K` exposure matrix.
#[derive(Debug, Clone)]
pub struct Instance {
    benchmark: Weights,
    exposures: DMatrix<f64>,
    // Row-major copy of `exposures` for per-asset loops.
    rows: Vec<f64>,
}

impl Instance {
    pub fn new(benchmark: DVector<f64>, exposures: DMatrix<f64>) -> Result<Self> {
        validate_instance(&benchmark, &exposures).map_err(Error::Validation)?;
        let benchmark = Weights::new(benchmark)?;
        Ok(Self::from_parts(benchmark, exposures))
    }

    /// Assembles an instance without validation. May carry zero factors, which
    /// only happens after every column was stripped as an intercept.
    pub(crate) fn from_parts(benchmark: Weights, exposures: DMatrix<f64>) -> Self {
        let (n, k) = exposures.shape();
        let mut rows = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                rows[i * k + j] = exposures[(i, j)];
            }
        }
        Self {
            benchmark,
            exposures,
            rows,
        }
    }

    /// Same exposures with a different prior.
    pub fn with_benchmark(&self, benchmark: Weights) -> Result<Self> {
        if benchmark.len() != self.n_assets() {
            return Err(Error::DimensionMismatch {
                what: "benchmark",
                expected: self.n_assets(),
                found: benchmark.len(),
            });
        }
        if let Some(i) = benchmark.iter().position(|&v| v <= 0.0) {
            return Err(Error::Validation(vec![Violation::BenchmarkNotPositive {
                index: i,
                value: benchmark[i],
            }]));
        }
        Ok(Self {
            benchmark,
            exposures: self.exposures.clone(),
            rows: self.rows.clone(),
        })
    }

    pub fn n_assets(&self) -> usize {
        self.exposures.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.exposures.ncols()
    }

    pub fn benchmark(&self) -> &Weights {
        &self.benchmark
    }

    pub fn exposures(&self) -> &DMatrix<f64> {
        &self.exposures
    }

    /// Exposure row of asset `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_factors();
        &self.rows[i * k..(i + 1) * k]
    }

    pub(crate) fn rows_flat(&self) -> &[f64] {
        &self.rows
    }

    /// `Xᵀw` for arbitrary weights.
    pub fn exposure_of(&self, w: &DVector<f64>) -> DVector<f64> {
        self.exposures.tr_mul(w)
    }

    /// Benchmark exposure `Xᵀb`.
    pub fn benchmark_exposure(&self) -> DVector<f64> {
        self.exposure_of(self.benchmark.as_vector())
    }

    pub(crate) fn check_targets(&self, t: &DVector<f64>) -> Result<()> {
        if t.len() != self.n_factors() {
            return Err(Error::DimensionMismatch {
                what: "targets",
                expected: self.n_factors(),
                found: t.len(),
            });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("targets must be finite".into()));
        }
        Ok(())
    }
}

/// How the exposure targets are imposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMode {
    Equality,
    /// Quadratic penalty `λ/2 ‖Xᵀw − t‖²`.
    Elastic { lambda_soft: f64 },
    /// `Xᵀw ∈ t + {u : ‖u‖₂ ≤ ρ}`.
    RobustL2 { rho: f64 },
    /// `Xᵀw ∈ t + {u : ‖u‖∞ ≤ ρ}`.
    RobustLinf { rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub target: DVector<f64>,
    pub mode: TargetMode,
}

impl TargetSpec {
    pub fn new(target: DVector<f64>, mode: TargetMode) -> Result<Self> {
        match mode {
            TargetMode::Elastic { lambda_soft } if !(lambda_soft > 0.0) => {
                return Err(Error::InvalidConfig(format!(
                    "lambda_soft must be positive, got {lambda_soft}"
                )))
            }
            TargetMode::RobustL2 { rho } | TargetMode::RobustLinf { rho }
                if !(rho >= 0.0 && rho.is_finite()) =>
            {
                return Err(Error::InvalidConfig(format!(
                    "rho must be nonnegative and finite, got {rho}"
                )))
            }
            _ => {}
        }
        Ok(Self { target, mode })
    }

    pub fn equality(target: DVector<f64>) -> Self {
        Self {
            target,
            mode: TargetMode::Equality,
        }
    }
}

/// `aᵀw = τ` or `aᵀw ≤ τ`, depending on which list of a [`ConstraintSet`] holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(a: DVector<f64>, bound: f64) -> Self {
        Self { a, bound }
    }

    /// Cap `wᵢ ≤ c`.
    pub fn cap(n: usize, i: usize, c: f64) -> Self {
        let mut a = DVector::zeros(n);
        a[i] = 1.0;
        Self { a, bound: c }
    }

    /// Floor `wᵢ ≥ f`, stored as `−wᵢ ≤ −f`.
    pub fn floor(n: usize, i: usize, f: f64) -> Self {
        let mut a = DVector::zeros(n);
        a[i] = -1.0;
        Self { a, bound: -f }
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.a.dot(w)
    }
}

/// Equality hyperplanes followed by half-spaces, projected in that order.
///
/// The budget `1ᵀw = 1` is never stored; projections normalize instead.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub equalities: Vec<LinearConstraint>,
    pub halfspaces: Vec<LinearConstraint>,
}

impl ConstraintSet {
    pub fn new(equalities: Vec<LinearConstraint>, halfspaces: Vec<LinearConstraint>) -> Self {
        Self {
            equalities,
            halfspaces,
        }
    }

    /// One hyperplane per factor column: `X[:, k]ᵀ w = t_k`.
    pub fn from_factor_targets(inst: &Instance, t: &DVector<f64>) -> Self {
        let equalities = (0..inst.n_factors())
            .map(|k| LinearConstraint::new(inst.exposures().column(k).into_owned(), t[k]))
            .collect();
        Self {
            equalities,
            halfspaces: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.equalities.len() + self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        for (index, c) in self.iter().map(|(_, c)| c).enumerate() {
            if c.a.len() != n_assets {
                return Err(Error::InvalidConstraint {
                    index,
                    reason: format!("coefficient vector has length {}, expected {n_assets}", c.a.len()),
                });
            }
            if c.a.iter().any(|v| !v.is_finite()) || !c.bound.is_finite() {
                return Err(Error::InvalidConstraint {
                    index,
                    reason: "non-finite coefficient or bound".into(),
                });
            }
            if c.a.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidConstraint {
                    index,
                    reason: "zero coefficient vector".into(),
                });
            }
        }
        Ok(())
    }

    /// Iterates equalities then half-spaces; the flag is true for equalities.
    pub fn iter(&self) -> impl Iterator<Item = (bool, &LinearConstraint)> {
        self.equalities
            .iter()
            .map(|c| (true, c))
            .chain(self.halfspaces.iter().map(|c| (false, c)))
    }

    /// Per-set violation: `|aᵀw − τ|` for equalities, `max(0, aᵀw − τ)` for half-spaces.
    pub fn violations(&self, w: &DVector<f64>) -> Vec<f64> {
        self.iter()
            .map(|(eq, c)| {
                let r = c.value(w) - c.bound;
                if eq {
                    r.abs()
                } else {
                    r.max(0.0)
                }
            })
            .collect()
    }

    pub fn max_violation(&self, w: &DVector<f64>) -> f64 {
        self.violations(w).into_iter().fold(0.0, f64::max)
    }
}

/// Outcome of the bounding-box screen.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityVerdict {
    /// Target `factor` lies outside the range of its exposure column.
    Infeasible {
        factor: usize,
        target: f64,
        min: f64,
        max: f64,
    },
    /// Passed the necessary check; hull membership is not decided.
    Unknown,
}

/// Necessary condition for `t ∈ conv{xᵢ}`: each target inside its column range.
pub fn feasibility_screen(inst: &Instance, t: &DVector<f64>) -> Result<FeasibilityVerdict> {
    inst.check_targets(t)?;
    for k in 0..inst.n_factors() {
        let col = inst.exposures().column(k);
        let (min, max) = (col.min(), col.max());
        if t[k] < min || t[k] > max {
            return Ok(FeasibilityVerdict::Infeasible {
                factor: k,
                target: t[k],
                min,
                max,
            });
        }
    }
    Ok(FeasibilityVerdict::Unknown)
}

/// Returns `(X − 1dᵀ, t − d)`. On the simplex both describe the same feasible set.
pub fn shift_exposures(
    inst: &Instance,
    t: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(Instance, DVector<f64>)> {
    inst.check_targets(t)?;
    if d.len() != inst.n_factors() {
        return Err(Error::DimensionMismatch {
            what: "shift",
            expected: inst.n_factors(),
            found: d.len(),
        });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("shift must be finite".into()));
    }
    let mut x = inst.exposures().clone();
    for (k, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-d[k]);
    }
    Ok((Instance::from_parts(inst.benchmark().clone(), x), t - d))
}

/// Columns removed by [`strip_intercept`], with their constant values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterceptReport {
    pub removed: Vec<(usize, f64)>,
}

impl InterceptReport {
    /// Original column indices that survived, in order.
    pub fn kept(&self, n_factors: usize) -> Vec<usize> {
        (0..n_factors)
            .filter(|k| !self.removed.iter().any(|(r, _)| r == k))
            .collect()
    }
}

/// Drops constant exposure columns, which duplicate the budget constraint.
pub fn strip_intercept(
    inst: &Instance,
    t: &DVector<f64>,
) -> Result<(Instance, DVector<f64>, InterceptReport)> {
    inst.check_targets(t)?;
    let mut report = InterceptReport::default();
    let mut keep = Vec::new();
    for k in 0..inst.n_factors() {
        let col = inst.exposures().column(k);
        let (min, max) = (col.min(), col.max());
        let scale = col.amax();
        if max - min <= INTERCEPT_TOL * scale {
            let v = col.mean();
            if (t[k] - v).abs() > INTERCEPT_TOL * v.abs().max(1.0) {
                return Err(Error::InconsistentIntercept {
                    column: k,
                    constant: v,
                    target: t[k],
                });
            }
            report.removed.push((k, v));
        } else {
            keep.push(k);
        }
    }
    if report.removed.is_empty() {
        return Ok((inst.clone(), t.clone(), report));
    }
    let x = inst.exposures().select_columns(keep.iter());
    let t2 = DVector::from_iterator(keep.len(), keep.iter().map(|&k| t[k]));
    Ok((Instance::from_parts(inst.benchmark().clone(), x), t2, report))
}

/// Geometric blend `normalize(b^{1/(1+γ)} · p^{γ/(1+γ)})`.
///
/// Minimizing `KL(w‖b) + γ KL(w‖p)` is the same as minimizing `KL(w‖b̃)` for
/// this `b̃`, up to a constant and a factor `1 + γ`.
pub fn effective_prior(b: &Weights, prev: &Weights, gamma: f64) -> Result<Weights> {
    if b.len() != prev.len() {
        return Err(Error::DimensionMismatch {
            what: "previous weights",
            expected: b.len(),
            found: prev.len(),
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be nonnegative and finite, got {gamma}"
        )));
    }
    if let Some((index, &value)) = prev.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::DegeneratePrior { index, value });
    }
    let wb = 1.0 / (1.0 + gamma);
    let wp = gamma / (1.0 + gamma);
    let logs = b.zip_map(prev.as_vector(), |bi, pi| wb * bi.ln() + wp * pi.ln());
    Ok(Weights::from_log(logs))
}
