mod common;

use common::*;
use nalgebra::DVector;
use pwh_core::identification::{
    derivative_samples, identify, identify_at, match_factors, recover_nonlinearity, IdentifyOptions,
};
use pwh_core::recovery::{
    als_from, als_update_a, als_update_h, random_factors, residual, AlsOptions,
};
use pwh_core::sampling::{
    build_gradient_vector, build_sampling_matrix, filter_polynomial, tensor_factors,
    OperatingPoints,
};
use pwh_core::tensor::CpdFactors;
use pwh_core::volterra::{synthesize_kernels, PwhSystem};
use pwh_core::C64;
use rand::Rng;

#[test]
fn residual_never_increases_within_a_run() {
    let mut r = rng(10);
    for trial in 0..4 {
        let sys = random_system(&mut r, 2, 3, 2, 3);
        let k = synthesize_kernels(&sys);
        let pts = OperatingPoints::generate(12, trial).unwrap();
        let p = build_sampling_matrix(3, 2, 3, &pts).unwrap();
        let y = build_gradient_vector(&k, &pts).unwrap();
        let opts = AlsOptions {
            max_cycles: 60,
            ..AlsOptions::default()
        };
        let run = als_from(&p, &y, random_factors(p.tensor_shape(), 2, trial, 0), &opts).unwrap();
        let mut prev = run.initial_residual;
        for &res in &run.update_residuals {
            assert!(res <= prev + 1e-12, "trial {trial}: {res} after {prev}");
            prev = res;
        }
        assert_eq!(run.update_residuals.len(), 3 * run.cycles_used);
    }
}

#[test]
fn block_update_is_a_local_minimizer() {
    let pts = OperatingPoints::generate(5, 3).unwrap();
    let p = build_sampling_matrix(2, 3, 3, &pts).unwrap();
    let mut r = rng(11);
    let y = DVector::from_vec(random_cvec(&mut r, p.rows()));
    let mut f = random_factors(p.tensor_shape(), 2, 4, 0);
    f.a = als_update_a(&p, &y, &f.b, &f.h, 1e-12).unwrap().matrix;
    let best = residual(&p, &y, &f).unwrap();
    for _ in 0..20 {
        let mut g = f.clone();
        g.a += random_complex(&mut r, 2, 2) * C64::new(1e-3, 0.0);
        assert!(residual(&p, &y, &g).unwrap() >= best - 1e-12);
    }
    f.h = als_update_h(&p, &y, &f.a, &f.b, 1e-12).unwrap().matrix;
    let best = residual(&p, &y, &f).unwrap();
    for _ in 0..20 {
        let mut g = f.clone();
        g.h += random_complex(&mut r, g.h.nrows(), 2) * C64::new(1e-3, 0.0);
        assert!(residual(&p, &y, &g).unwrap() >= best - 1e-12);
    }
}

#[test]
fn analytic_factors_reproduce_gradients() {
    let mut r = rng(12);
    for _ in 0..5 {
        let d = r.random_range(1..=4);
        let sys = random_system(&mut r, 2, 3, 3, d);
        let pts = OperatingPoints::generate(7, 1).unwrap();
        let p = build_sampling_matrix(3, 3, d, &pts).unwrap();
        let y = build_gradient_vector(&synthesize_kernels(&sys), &pts).unwrap();
        let f = tensor_factors(&sys, &pts);
        let py = p.apply(&f.vectorize()).unwrap();
        assert!((py - y).camax() < 1e-12);
    }
}

#[test]
fn gradients_ignore_constant_terms() {
    let mut r = rng(13);
    let sys = random_system(&mut r, 2, 2, 2, 3);
    let mut shifted = sys.clone();
    shifted.const0 = vec![10.0, -3.0];
    let pts = OperatingPoints::generate(4, 0).unwrap();
    let y1 = build_gradient_vector(&synthesize_kernels(&sys), &pts).unwrap();
    let y2 = build_gradient_vector(&synthesize_kernels(&shifted), &pts).unwrap();
    assert_eq!(y1, y2);
    assert_ne!(synthesize_kernels(&sys).f0, synthesize_kernels(&shifted).f0);
}

#[test]
fn derivative_samples_are_g_prime_at_filter_values() {
    // g(x) = 2x - x^2 + 0.5x^3, so g'(x) = 2 - 2x + 1.5x^2
    let pts = OperatingPoints::generate(6, 5).unwrap();
    let a = [0.7, -0.2, 0.4];
    let coeffs = [c(2.0, 0.0), c(-1.0, 0.0), c(0.5, 0.0)];
    let h = pwh_core::sampling::nonlinearity_vector(&a, &coeffs, &pts);
    for (smp, &mu) in derivative_samples(&h, &a, &pts, 3)
        .unwrap()
        .iter()
        .zip(pts.as_slice())
    {
        let x = filter_polynomial(&a, mu);
        let want = c(2.0, 0.0) - x * 2.0 + x * x * 1.5;
        assert!((smp.x - x).norm() < 1e-15);
        assert!((smp.value - want).norm() < 1e-12);
    }
}

#[test]
fn nonlinearity_recovery_is_exact_on_consistent_h() {
    let mut r = rng(14);
    for _ in 0..10 {
        let d = r.random_range(1..=5);
        let a: Vec<C64> = random_cvec(&mut r, 3);
        let coeffs = random_cvec(&mut r, d);
        let pts = OperatingPoints::generate(8, r.random()).unwrap();
        let h = pwh_core::sampling::nonlinearity_vector(&a, &coeffs, &pts);
        let fit = recover_nonlinearity(&h, &a, &pts, d).unwrap();
        assert!(max_abs_diff(&fit.coeffs, &coeffs) < 1e-10);
        assert!(fit.identifiable.iter().all(|&x| x));
    }
}

fn scaled(sys: &PwhSystem, alpha: &[f64], beta: &[f64]) -> PwhSystem {
    let mut out = sys.clone();
    for l in 0..sys.branches() {
        out.a.column_mut(l).scale_mut(alpha[l]);
        out.b.column_mut(l).scale_mut(beta[l]);
        for s in 1..=sys.degree() {
            out.c[(s - 1, l)] /= beta[l] * alpha[l].powi(s as i32);
        }
        out.const0[l] /= beta[l];
    }
    out
}

#[test]
fn scaled_system_has_identical_kernels() {
    let mut r = rng(15);
    let sys = random_system(&mut r, 2, 3, 2, 3);
    let other = scaled(&sys, &[2.0, -0.5], &[-3.0, 0.25]);
    let (k1, k2) = (synthesize_kernels(&sys), synthesize_kernels(&other));
    assert!((k1.f0 - k2.f0).abs() < 1e-12);
    for (t1, t2) in k1.kernels().iter().zip(k2.kernels()) {
        assert!(max_abs_diff(t1.data(), t2.data()) < 1e-12);
    }
}

#[test]
fn match_errors_are_closed_under_scaling() {
    let mut r = rng(16);
    let truth = random_system(&mut r, 2, 3, 3, 3);
    let mut est = truth.clone();
    est.a += random_real(&mut r, 3, 2) * 1e-3;
    est.c += random_real(&mut r, 3, 2) * 1e-3;
    let m1 = match_factors(&est, &truth).unwrap();
    let rescaled = scaled(&est, &[-1.7, 0.3], &[4.0, -0.6]);
    let mut swapped = rescaled.clone();
    swapped.a.swap_columns(0, 1);
    swapped.b.swap_columns(0, 1);
    swapped.c.swap_columns(0, 1);
    swapped.const0.swap(0, 1);
    let m2 = match_factors(&swapped, &truth).unwrap();
    assert_eq!(m2.permutation, vec![1, 0]);
    for (x, y) in [
        (&m1.a_error, &m2.a_error),
        (&m1.b_error, &m2.b_error),
        (&m1.c_error, &m2.c_error),
    ] {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }
}

#[test]
fn random_systems_round_trip() {
    let mut r = rng(17);
    let mut good = 0;
    let mut worst = Vec::new();
    for trial in 0..10u64 {
        let rank = 1 + (trial % 2) as usize;
        let sys = random_system(&mut r, rank, 3, 3, 3);
        let k = synthesize_kernels(&sys);
        let opts = IdentifyOptions {
            points_seed: trial,
            als: AlsOptions {
                seed: trial,
                ..AlsOptions::default()
            },
        };
        let rep = identify(&k, rank, 3, 3, 20, &opts).unwrap();
        let m = rep.compare(&sys).unwrap();
        let err = m.max_filter_error().max(m.max_coeff_error());
        worst.push(err);
        if err < 1e-5 {
            good += 1;
        }
    }
    assert!(good >= 8, "only {good}/10 recovered: {worst:?}");
}

#[test]
fn non_convergence_is_flagged_not_fatal() {
    let mut r = rng(18);
    let sys = random_system(&mut r, 2, 3, 3, 3);
    let k = synthesize_kernels(&sys);
    let pts = OperatingPoints::generate(10, 2).unwrap();
    let als = AlsOptions {
        max_cycles: 1,
        restarts: 2,
        success_residual: 1e-14,
        ..AlsOptions::default()
    };
    let rep = identify_at(&k, 2, 3, 3, pts, &als).unwrap();
    assert!(!rep.best_run().converged);
    assert!(rep.flagged());
    assert_eq!(rep.runs.len(), 2);
}

#[test]
fn linear_system_uses_single_slice() {
    let mut r = rng(19);
    let sys = random_system(&mut r, 1, 2, 3, 1);
    let k = synthesize_kernels(&sys);
    let pts = OperatingPoints::generate(5, 0).unwrap();
    let p = build_sampling_matrix(2, 3, 1, &pts).unwrap();
    assert_eq!(p.tensor_shape().2, 1);
    assert_eq!(p.rows(), 4);
    let rep = identify_at(&k, 1, 2, 3, pts, &AlsOptions::default()).unwrap();
    assert!(rep.final_residual() < 1e-10);
}

#[test]
fn parallel_restarts_match_serial() {
    let mut r = rng(20);
    let sys = random_system(&mut r, 2, 2, 2, 3);
    let k = synthesize_kernels(&sys);
    let serial = AlsOptions {
        restarts: 4,
        max_cycles: 30,
        ..AlsOptions::default()
    };
    let parallel = AlsOptions {
        parallel: true,
        ..serial.clone()
    };
    let pts = OperatingPoints::generate(8, 1).unwrap();
    let a = identify_at(&k, 2, 2, 2, pts.clone(), &serial).unwrap();
    let b = identify_at(&k, 2, 2, 2, pts, &parallel).unwrap();
    assert_eq!(a.best, b.best);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.residual_history, y.residual_history);
    }
}

#[test]
fn exact_factors_are_a_fixed_point() {
    let mut r = rng(21);
    let sys = random_system(&mut r, 2, 3, 2, 3);
    let pts = OperatingPoints::generate(10, 4).unwrap();
    let p = build_sampling_matrix(3, 2, 3, &pts).unwrap();
    let y = build_gradient_vector(&synthesize_kernels(&sys), &pts).unwrap();
    let f: CpdFactors = tensor_factors(&sys, &pts);
    let run = als_from(&p, &y, f.clone(), &AlsOptions::default()).unwrap();
    assert!(run.initial_residual < 1e-12);
    assert!(run.final_residual() < 1e-10);
}
