mod common;

use common::*;
use egmu::{log_partition, tilt, tilted_weights, Instance};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_tilt_is_benchmark(seed in any::<u64>(), n in 1usize..200, k in 1usize..5) {
        let mut r = rng(seed);
        prop_assume!(k <= n);
        let inst = random_instance(&mut r, n, k);
        let p = tilt(&inst, &DVector::zeros(k));
        prop_assert!(linf(&p.weights, inst.benchmark()) <= 1e-15);
        // log-sum-exp over n terms of a normalized benchmark rounds at about n ulps.
        prop_assert!(p.log_z.abs() <= 1e-15 + n as f64 * f64::EPSILON);
    }

    #[test]
    fn tilted_weights_are_valid(seed in any::<u64>(), n in 1usize..200, k in 1usize..5, scale in 0.0f64..50.0) {
        let mut r = rng(seed);
        prop_assume!(k <= n);
        let inst = random_instance(&mut r, n, k);
        let theta = normal_vec(&mut r, k) * scale;
        let (w, lz) = tilted_weights(&inst, &theta);
        prop_assert!(w.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(lz.is_finite());
        let naive = naive_tilt(inst.benchmark(), inst.exposures(), &theta);
        prop_assert!(linf(&w, &naive) <= 1e-12);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences(seed in any::<u64>(), n in 5usize..120, k in 1usize..5) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, n, k);
        let theta = normal_vec(&mut r, k) * 0.5;
        let p = tilt(&inst, &theta);
        let h = 1e-5;
        let mut grad = DVector::zeros(k);
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            grad[j] = (log_partition(&inst, &up) - log_partition(&inst, &dn)) / (2.0 * h);
            let col = (tilt(&inst, &up).mean - tilt(&inst, &dn).mean) / (2.0 * h);
            jac.set_column(j, &col);
        }
        prop_assert!(rel(&grad, &p.mean) <= 1e-6, "gradient rel {}", rel(&grad, &p.mean));
        let err = (&jac - &p.cov).norm() / p.cov.norm();
        prop_assert!(err <= 1e-5, "hessian rel {}", err);
    }

    #[test]
    fn log_partition_survives_large_shifts(seed in any::<u64>(), n in 1usize..100, k in 1usize..4, shift in 1e2f64..1e6) {
        let mut r = rng(seed);
        prop_assume!(k <= n);
        let inst = random_instance(&mut r, n, k);
        let theta = normal_vec(&mut r, k);
        let d = normal_vec(&mut r, k).map(|v| v.signum() * shift);
        let mut x = inst.exposures().clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(d[j]);
        }
        let shifted = Instance::new(inst.benchmark().as_vector().clone(), x).unwrap();
        let base = log_partition(&inst, &theta);
        let moved = log_partition(&shifted, &theta);
        let expect = base + theta.dot(&d);
        prop_assert!(moved.is_finite());
        prop_assert!((moved - expect).abs() <= 1e-12 * expect.abs().max(1.0) * 8.0, "{moved} vs {expect}");
        prop_assert!((base - naive_log_partition(inst.benchmark(), inst.exposures(), &theta)).abs() <= 1e-12);
    }
}
