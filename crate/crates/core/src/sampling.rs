//! Vandermonde operating points and the sampling operator that maps a
//! third-order tensor to the stacked gradient vector.
//!
//! Slice `1` of the tensor is sampled at `mu = 1` with degree 1; slices
//! `2 + (s-2)N ..= 1 + (s-1)N` are sampled with degree `s` at
//! `mu_1..mu_N`. Every slice is read through the same operator: scale column
//! `j` by `mu^{(j-1)(s-1)}`, then sum antidiagonals.

use std::f64::consts::TAU;
use std::io::{self, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::CpdFactors;
use crate::volterra::{gradient_of_homogeneous, KernelSet, PwhSystem};
use crate::C64;

const UNIT_TOL: f64 = 1e-12;
const DISTINCT_TOL: f64 = 1e-12;

/// Distinct points `mu_1..mu_N` on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoints {
    mus: Vec<C64>,
}

impl OperatingPoints {
    pub fn new(mus: Vec<C64>) -> Result<Self> {
        if mus.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one operating point".into(),
            ));
        }
        for (k, mu) in mus.iter().enumerate() {
            if (mu.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "operating point {} = {mu} is not on the unit circle",
                    k + 1
                )));
            }
            if mus[..k]
                .iter()
                .any(|other| (other - mu).norm() <= DISTINCT_TOL)
            {
                return Err(Error::InvalidArgument(format!(
                    "operating point {} = {mu} duplicates an earlier point",
                    k + 1
                )));
            }
        }
        Ok(OperatingPoints { mus })
    }

    /// `n` points `exp(i theta)` with `theta` uniform on `[0, 2pi)`.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "need at least one operating point".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mus: Vec<C64> = Vec::with_capacity(n);
        while mus.len() < n {
            let theta: f64 = rng.random_range(0.0..TAU);
            let mu = C64::from_polar(1.0, theta);
            if mus.iter().all(|other| (other - mu).norm() > DISTINCT_TOL) {
                mus.push(mu);
            }
        }
        Ok(OperatingPoints { mus })
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.mus
    }

    /// One `re im` pair per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        for mu in &self.mus {
            writeln!(w, "{:?} {:?}", mu.re, mu.im)?;
        }
        Ok(())
    }
}

/// `(1, mu, mu^2, .., mu^{L-1})`
pub fn vandermonde_point(mu: C64, len: usize) -> Vec<C64> {
    std::iter::successors(Some(C64::new(1.0, 0.0)), |p| Some(p * mu))
        .take(len)
        .collect()
}

/// `a(mu) = a_1 + a_2 mu + .. + a_L1 mu^{L1-1}`
pub fn filter_polynomial<T: Copy + Into<C64>>(a: &[T], mu: C64) -> C64 {
    a.iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &x| acc * mu + x.into())
}

/// Antidiagonal sums: `out[m] = sum_{i+j=m} E[i,j]` (0-based).
pub fn hankelize(e: &DMatrix<C64>) -> Vec<C64> {
    let (l1, l2) = e.shape();
    let mut out = vec![C64::new(0.0, 0.0); l1 + l2 - 1];
    for j in 0..l2 {
        for i in 0..l1 {
            out[i + j] += e[(i, j)];
        }
    }
    out
}

/// `hankelize(E * Diag(1, mu^{s-1}, .., mu^{(L2-1)(s-1)}))`
pub fn project_slice(e: &DMatrix<C64>, mu: C64, degree: usize) -> Vec<C64> {
    let scale = column_scales(mu, degree, e.ncols());
    let (l1, l2) = e.shape();
    let mut out = vec![C64::new(0.0, 0.0); l1 + l2 - 1];
    for (j, w) in scale.iter().enumerate() {
        for i in 0..l1 {
            out[i + j] += e[(i, j)] * w;
        }
    }
    out
}

fn column_scales(mu: C64, degree: usize, l2: usize) -> Vec<C64> {
    let step = mu.powi(degree as i32 - 1);
    vandermonde_point(step, l2)
}

/// Which operating point and degree sample one tensor slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSampling {
    pub mu: C64,
    pub degree: usize,
}

/// Slice order of the stacked gradient vector: `(1, 1)` then
/// `(mu_k, s)` for `s = 2..=d`, `k = 1..=N`.
pub fn slice_schedule(degree: usize, pts: &OperatingPoints) -> Vec<SliceSampling> {
    let mut slices = vec![SliceSampling {
        mu: C64::new(1.0, 0.0),
        degree: 1,
    }];
    for s in 2..=degree {
        slices.extend(
            pts.as_slice()
                .iter()
                .map(|&mu| SliceSampling { mu, degree: s }),
        );
    }
    slices
}

/// One stored nonzero of `P` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: C64,
}

/// Sparse matrix `P` of shape `M x (L1 L2 L3)`, block diagonal with one
/// banded block per tensor slice. Entries are grouped by slice so a block
/// can be borrowed without copying.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    l1: usize,
    l2: usize,
    slices: Vec<SliceSampling>,
    entries: Vec<Entry>,
}

impl SamplingOperator {
    /// `(L1, L2, L3)`
    pub fn tensor_shape(&self) -> (usize, usize, usize) {
        (self.l1, self.l2, self.slices.len())
    }

    pub fn memory_len(&self) -> usize {
        self.l1 + self.l2 - 1
    }

    pub fn rows(&self) -> usize {
        self.slices.len() * self.memory_len()
    }

    pub fn cols(&self) -> usize {
        self.l1 * self.l2 * self.slices.len()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn slices(&self) -> &[SliceSampling] {
        &self.slices
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Nonzeros of the block for slice `k` (0-based).
    pub fn slice_entries(&self, k: usize) -> &[Entry] {
        let per = self.l1 * self.l2;
        &self.entries[k * per..(k + 1) * per]
    }

    pub fn slice_rows(&self, k: usize) -> Range<usize> {
        let m = self.memory_len();
        k * m..(k + 1) * m
    }

    /// Equations per unknown of a rank-`r` model.
    pub fn row_unknown_ratio(&self, rank: usize) -> f64 {
        let unknowns = rank * (self.l1 + self.l2 + self.slices.len());
        self.rows() as f64 / unknowns as f64
    }

    /// `P x`
    pub fn apply(&self, x: &[C64]) -> Result<DVector<C64>> {
        if x.len() != self.cols() {
            return Err(Error::dims("SamplingOperator::apply", self.cols(), x.len()));
        }
        let mut y = DVector::zeros(self.rows());
        for e in &self.entries {
            y[e.row] += e.value * x[e.col];
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut p = DMatrix::zeros(self.rows(), self.cols());
        for e in &self.entries {
            p[(e.row, e.col)] += e.value;
        }
        p
    }

    /// Coordinate text: header `rows cols nnz`, then `row col re im`
    /// per nonzero with 1-based indices.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.rows(), self.cols(), self.nnz())?;
        for e in &self.entries {
            writeln!(
                w,
                "{} {} {:?} {:?}",
                e.row + 1,
                e.col + 1,
                e.value.re,
                e.value.im
            )?;
        }
        Ok(())
    }

    /// Splits a column index of `vec(T)` into `(i, j, k)`.
    pub fn unravel(&self, col: usize) -> (usize, usize, usize) {
        let i = col % self.l1;
        let j = (col / self.l1) % self.l2;
        let k = col / (self.l1 * self.l2);
        (i, j, k)
    }
}

pub fn build_sampling_matrix(
    l1: usize,
    l2: usize,
    degree: usize,
    pts: &OperatingPoints,
) -> Result<SamplingOperator> {
    if l1 == 0 || l2 == 0 || degree == 0 {
        return Err(Error::InvalidArgument(format!(
            "sampling operator needs L1, L2, d >= 1 (got {l1}, {l2}, {degree})"
        )));
    }
    let slices = slice_schedule(degree, pts);
    let memory = l1 + l2 - 1;
    let mut entries = Vec::with_capacity(slices.len() * l1 * l2);
    for (k, sl) in slices.iter().enumerate() {
        let scales = column_scales(sl.mu, sl.degree, l2);
        for (j, &w) in scales.iter().enumerate() {
            for i in 0..l1 {
                entries.push(Entry {
                    row: k * memory + i + j,
                    col: (k * l2 + j) * l1 + i,
                    value: w,
                });
            }
        }
    }
    Ok(SamplingOperator {
        l1,
        l2,
        slices,
        entries,
    })
}

/// Stacks `grad f^(1)(u_1)`, then `grad f^(s)(u_{mu_k})` for `s = 2..=d`
/// and `k = 1..=N`. Length `((d-1)N + 1) L`.
pub fn build_gradient_vector(k: &KernelSet, pts: &OperatingPoints) -> Result<DVector<C64>> {
    let memory = k.memory_len();
    let slices = slice_schedule(k.degree(), pts);
    let mut y = Vec::with_capacity(slices.len() * memory);
    for sl in &slices {
        let u = vandermonde_point(sl.mu, memory);
        y.extend(gradient_of_homogeneous(k, sl.degree, &u)?);
    }
    Ok(DVector::from_vec(y))
}

/// `h = (c_1, 2 c_2 a(mu_1), .., 2 c_2 a(mu_N), .., d c_d a(mu_N)^{d-1})`
/// for one branch with coefficients `c_1..c_d`.
pub fn nonlinearity_vector<T: Copy + Into<C64>>(
    a: &[T],
    coeffs: &[C64],
    pts: &OperatingPoints,
) -> Vec<C64> {
    let degree = coeffs.len();
    let amu: Vec<C64> = pts
        .as_slice()
        .iter()
        .map(|&mu| filter_polynomial(a, mu))
        .collect();
    let mut h = Vec::with_capacity(1 + pts.len() * degree.saturating_sub(1));
    h.push(coeffs[0]);
    for s in 2..=degree {
        let scale = coeffs[s - 1] * s as f64;
        h.extend(amu.iter().map(|x| scale * x.powi(s as i32 - 1)));
    }
    h
}

/// The factors `(A, B, H)` whose sampled CPD reproduces the gradient
/// vector of `sys` at `pts`.
pub fn tensor_factors(sys: &PwhSystem, pts: &OperatingPoints) -> CpdFactors {
    let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
    let r = sys.branches();
    let l3 = 1 + pts.len() * (sys.degree() - 1);
    let mut h = DMatrix::zeros(l3, r);
    for l in 0..r {
        let a: Vec<f64> = sys.a.column(l).iter().copied().collect();
        let c: Vec<C64> = sys.c.column(l).iter().map(|&x| C64::new(x, 0.0)).collect();
        let hl = nonlinearity_vector(&a, &c, pts);
        h.set_column(l, &DVector::from_vec(hl));
    }
    CpdFactors {
        a: to_c(&sys.a),
        b: to_c(&sys.b),
        h,
    }
}
