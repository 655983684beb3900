//! Shared kernels: LogSumExp partition function, exponential tilt with its
//! first two moments, ridge-regularized SPD solves and monotone root finding.
//!
//! Per-asset reductions run over fixed-size chunks whose partial results are
//! combined in index order, so results do not depend on the thread count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Instance, Weights};

const CHUNK: usize = 4096;
const PARALLEL_MIN: usize = 4 * CHUNK;

/// Default absolute tolerance on `|φ|` for [`find_root_monotone`].
pub const ROOT_TOL: f64 = 1e-12;
/// Maximum number of bracket doublings in [`find_root_monotone`].
pub const MAX_DOUBLINGS: u32 = 100;

/// Tilted distribution `w(θ) ∝ b ⊙ exp(Xθ)` with its moments.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub theta: DVector<f64>,
    pub log_z: f64,
    pub weights: Weights,
    /// `E_w[x] = Xᵀw`.
    pub mean: DVector<f64>,
    /// `Cov_w(x)`, centered form.
    pub cov: DMatrix<f64>,
}

/// Sums `f(chunk_start, chunk)` over fixed chunks, combining in order.
fn chunked_sum<T, F>(n: usize, zero: T, f: F, add: fn(T, T) -> T) -> T
where
    T: Send + Clone,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
{
    let ranges: Vec<_> = (0..n)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n))
        .collect();
    let parts: Vec<T> = if n >= PARALLEL_MIN {
        ranges.into_par_iter().map(&f).collect()
    } else {
        ranges.into_iter().map(&f).collect()
    };
    parts.into_iter().fold(zero, add)
}

fn scores(inst: &Instance, theta: &DVector<f64>) -> Vec<f64> {
    let k = inst.n_factors();
    let rows = inst.rows_flat();
    let mut s = vec![0.0; inst.n_assets()];
    let fill = |(i, out): (usize, &mut [f64])| {
        for (j, v) in out.iter_mut().enumerate() {
            let r = &rows[(i * CHUNK + j) * k..(i * CHUNK + j + 1) * k];
            *v = r.iter().zip(theta.iter()).map(|(x, t)| x * t).sum();
        }
    };
    if s.len() >= PARALLEL_MIN {
        s.par_chunks_mut(CHUNK).enumerate().for_each(fill);
    } else {
        s.chunks_mut(CHUNK).enumerate().for_each(fill);
    }
    s
}

/// Unnormalized `bᵢ exp(sᵢ − m)`, their sum, and the shift `m = max sᵢ`.
fn shifted_terms(inst: &Instance, theta: &DVector<f64>) -> (Vec<f64>, f64, f64) {
    let mut s = scores(inst, theta);
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b = inst.benchmark();
    for (i, v) in s.iter_mut().enumerate() {
        *v = b[i] * (*v - m).exp();
    }
    let terms = s;
    let sum = chunked_sum(
        terms.len(),
        0.0,
        |r| terms[r].iter().sum::<f64>(),
        |a, b| a + b,
    );
    (terms, sum, m)
}

/// `log Σᵢ bᵢ exp(θᵀxᵢ)` via the max-shift.
pub fn log_partition(inst: &Instance, theta: &DVector<f64>) -> f64 {
    if inst.n_factors() == 0 {
        return inst.benchmark().sum().ln();
    }
    let (_, sum, m) = shifted_terms(inst, theta);
    sum.ln() + m
}

/// Tilted weights only, without moments.
pub fn tilted_weights(inst: &Instance, theta: &DVector<f64>) -> (Weights, f64) {
    if inst.n_factors() == 0 {
        return (inst.benchmark().clone(), 0.0);
    }
    let (terms, sum, m) = shifted_terms(inst, theta);
    let w = DVector::from_iterator(terms.len(), terms.into_iter().map(|t| t / sum));
    (Weights::normalize(w), sum.ln() + m)
}

/// Exponential tilt with mean and centered covariance of the exposures.
pub fn tilt(inst: &Instance, theta: &DVector<f64>) -> DualPoint {
    let k = inst.n_factors();
    let (weights, log_z) = tilted_weights(inst, theta);
    let rows = inst.rows_flat();
    let w = weights.as_vector();

    let mean = chunked_sum(
        inst.n_assets(),
        DVector::zeros(k),
        |r| {
            let mut acc = DVector::zeros(k);
            for i in r {
                let wi = w[i];
                for j in 0..k {
                    acc[j] += wi * rows[i * k + j];
                }
            }
            acc
        },
        |a, b| a + b,
    );

    let upper = chunked_sum(
        inst.n_assets(),
        DMatrix::zeros(k, k),
        |r| {
            let mut acc = DMatrix::zeros(k, k);
            let mut d = vec![0.0; k];
            for i in r {
                let wi = w[i];
                for j in 0..k {
                    d[j] = rows[i * k + j] - mean[j];
                }
                for c in 0..k {
                    let wc = wi * d[c];
                    for rr in 0..=c {
                        acc[(rr, c)] += wc * d[rr];
                    }
                }
            }
            acc
        },
        |a, b| a + b,
    );
    let mut cov = upper;
    for c in 0..k {
        for r in (c + 1)..k {
            cov[(r, c)] = cov[(c, r)];
        }
    }

    DualPoint {
        theta: theta.clone(),
        log_z,
        weights,
        mean,
        cov,
    }
}

/// Solves `(Σ + δI)Δ = g` by Cholesky, failing when a pivot is at rounding
/// level relative to the largest diagonal entry.
pub fn regularized_solve(sigma: &DMatrix<f64>, g: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let k = sigma.nrows();
    if sigma.ncols() != k || g.len() != k {
        return Err(Error::DimensionMismatch {
            what: "linear system",
            expected: k,
            found: g.len(),
        });
    }
    let mut m = sigma.clone();
    for i in 0..k {
        m[(i, i)] += delta;
    }
    let top = m.diagonal().amax();
    let chol = Cholesky::new(m).ok_or(Error::SingularSystem)?;
    // Rounding can let an exactly singular matrix through with a tiny pivot.
    let pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &p| a.min(p * p));
    if !(pivot > 1e3 * f64::EPSILON * top) {
        return Err(Error::SingularSystem);
    }
    let x = chol.solve(g);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

/// Root of a continuous, strictly monotone scalar function.
///
/// The bracket is grown geometrically from `hint ± 1`; Brent's method then
/// refines it until `|φ| ≤ ftol` or the bracket collapses to adjacent floats.
pub fn find_root_monotone<F>(mut f: F, hint: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f0 = f(hint);
    if f0.abs() <= ftol {
        return Ok(hint);
    }
    let mut step = 1.0;
    let mut bracket = None;
    for _ in 0..=MAX_DOUBLINGS {
        let (lo, hi) = (hint - step, hint + step);
        let (flo, fhi) = (f(lo), f(hi));
        if flo.abs() <= ftol {
            return Ok(lo);
        }
        if fhi.abs() <= ftol {
            return Ok(hi);
        }
        if flo.signum() != f0.signum() {
            bracket = Some((lo, hint, flo, f0));
            break;
        }
        if fhi.signum() != f0.signum() {
            bracket = Some((hint, hi, f0, fhi));
            break;
        }
        step *= 2.0;
    }
    let (a, b, fa, fb) = bracket.ok_or(Error::NoSignChange {
        hint,
        doublings: MAX_DOUBLINGS,
    })?;
    Ok(brent(&mut f, a, b, fa, fb, ftol))
}

fn brent<F: FnMut(f64) -> f64>(f: &mut F, a0: f64, b0: f64, fa0: f64, fb0: f64, ftol: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    let (mut c, mut fc) = (b, fb);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * f64::MIN_POSITIVE;
        let xm = 0.5 * (c - b);
        if fb.abs() <= ftol || xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    b
}
