#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pwh_core::volterra::PwhSystem;
use pwh_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn random_real(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_complex(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Random system whose filters keep a leading entry away from zero.
pub fn random_system(rng: &mut ChaCha8Rng, r: usize, l1: usize, l2: usize, d: usize) -> PwhSystem {
    let mut a = random_real(rng, l1, r);
    let mut b = random_real(rng, l2, r);
    for l in 0..r {
        a[(0, l)] = rng.random_range(0.5..1.0);
        b[(0, l)] = rng.random_range(0.5..1.0);
    }
    let cm = random_real(rng, d, r);
    let const0 = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
    PwhSystem::new(a, b, cm, const0).unwrap()
}

pub fn max_abs_diff(x: &[C64], y: &[C64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// Solves the square system `m x = rhs` by Gaussian elimination with
/// partial pivoting.
pub fn gauss_solve(m: &DMatrix<C64>, rhs: &DVector<C64>) -> DVector<C64> {
    let n = m.nrows();
    let mut aug = DMatrix::zeros(n, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(m);
    aug.set_column(n, rhs);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[(i, col)].norm().total_cmp(&aug[(j, col)].norm()))
            .unwrap();
        aug.swap_rows(col, piv);
        let p = aug[(col, col)];
        assert!(p.norm() > 0.0, "singular system");
        for row in col + 1..n {
            let f = aug[(row, col)] / p;
            for k in col..=n {
                let v = aug[(col, k)];
                aug[(row, k)] -= f * v;
            }
        }
    }
    let mut x = DVector::zeros(n);
    for row in (0..n).rev() {
        let mut acc = aug[(row, n)];
        for k in row + 1..n {
            acc -= aug[(row, k)] * x[k];
        }
        x[row] = acc / aug[(row, row)];
    }
    x
}

/// Least squares through the normal equations `Z^H Z x = Z^H y`.
pub fn normal_equations(z: &DMatrix<C64>, y: &DVector<C64>) -> DVector<C64> {
    gauss_solve(&(z.adjoint() * z), &(z.adjoint() * y))
}
