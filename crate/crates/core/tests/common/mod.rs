//! Random instance generators and naive reference computations shared by the
//! integration tests.
#![allow(dead_code)]

use egmu::{Instance, Weights};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng))
}

/// Strictly positive normalized vector with entries within a factor 5 of each other.
pub fn positive_simplex(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
    let s = v.sum();
    v / s
}

/// Uniform point on the simplex (normalized exponentials).
pub fn uniform_simplex(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| -rng.random_range(f64::EPSILON..1.0f64).ln());
    let s = v.sum();
    v / s
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Instance {
    let b = positive_simplex(rng, n);
    let x = normal_mat(rng, n, k);
    Instance::new(b, x).unwrap()
}

/// `normalize(b ⊙ exp(Xθ))`, written out directly with a max shift.
pub fn naive_tilt(b: &DVector<f64>, x: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let s = x * theta;
    let m = s.max();
    let e = DVector::from_fn(b.len(), |i, _| b[i] * (s[i] - m).exp());
    let z = e.sum();
    e / z
}

pub fn naive_log_partition(b: &DVector<f64>, x: &DMatrix<f64>, theta: &DVector<f64>) -> f64 {
    let s = x * theta;
    let m = s.max();
    let z: f64 = (0..b.len()).map(|i| b[i] * (s[i] - m).exp()).sum();
    z.ln() + m
}

/// Feasible target `Xᵀw̃` for a tilt `w̃` with `θ̃ ~ N(0, scale²)`.
pub fn interior_target(rng: &mut ChaCha8Rng, inst: &Instance, scale: f64) -> (DVector<f64>, DVector<f64>) {
    let theta = normal_vec(rng, inst.n_factors()) * scale;
    let w = naive_tilt(inst.benchmark().as_vector(), inst.exposures(), &theta);
    (inst.exposures().transpose() * &w, theta)
}

pub fn kl(w: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter()
        .zip(b.iter())
        .filter(|(wi, _)| **wi > 0.0)
        .map(|(wi, bi)| wi * (wi / bi).ln())
        .sum()
}

pub fn weights(v: DVector<f64>) -> Weights {
    Weights::new(v).unwrap()
}

pub fn l1(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).lp_norm(1)
}

pub fn linf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
