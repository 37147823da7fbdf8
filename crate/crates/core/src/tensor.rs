//! Dense complex tensors, CPD factor triples, and the matrix products the
//! ALS block updates are built from.
//!
//! All storage is column-major: the first index varies fastest. Formulas in
//! the docs use 1-based indices; the code is 0-based everywhere and the only
//! translation point is [`Tensor::linear_index`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::C64;

/// A dense N-way array of complex doubles, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<C64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    /// Order-0 tensor holding one value.
    pub fn scalar(value: C64) -> Self {
        Tensor {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_data(dims: &[usize], data: Vec<C64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::dims("Tensor::from_data", len, data.len()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut t = Tensor::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for lin in 0..t.data.len() {
            t.data[lin] = f(&idx);
            increment(&mut idx, dims);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Column-major position of a 0-based multi-index.
    ///
    /// The 1-based tuple `(i1, .., iN)` of the formulas maps to
    /// `(i1-1) + (i2-1)*n1 + (i3-1)*n1*n2 + ..`.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.dims) {
            debug_assert!(i < n);
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    /// Column-major vectorization.
    pub fn vectorize(&self) -> Vec<C64> {
        self.data.clone()
    }

    /// Reinterprets the column-major data under new dimensions.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Tensor::from_data(dims, self.data)
    }

    /// Contraction on `mode` (0-based): `[T •_p v]` sums the `p`-th index
    /// against `v`. The result has order `N - 1`.
    pub fn contract(&self, mode: usize, v: &[C64]) -> Result<Tensor> {
        if mode >= self.order() {
            return Err(Error::dims(
                "contract",
                format!("mode < {}", self.order()),
                mode,
            ));
        }
        let n = self.dims[mode];
        if v.len() != n {
            return Err(Error::dims("contract", n, v.len()));
        }
        let inner: usize = self.dims[..mode].iter().product();
        let outer: usize = self.dims[mode + 1..].iter().product();
        let mut out = vec![C64::new(0.0, 0.0); inner * outer];
        for o in 0..outer {
            for (i, &vi) in v.iter().enumerate() {
                let base = (o * n + i) * inner;
                let src = &self.data[base..base + inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s * vi;
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.remove(mode);
        Ok(Tensor { dims, data: out })
    }

    /// Value of an order-0 tensor.
    pub fn as_scalar(&self) -> Option<C64> {
        (self.dims.is_empty()).then(|| self.data[0])
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Three factor matrices with a shared column count `r`, representing
/// `[[A, B, H]] = sum_l a_l (x) b_l (x) h_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdFactors {
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
    pub h: DMatrix<C64>,
}

impl CpdFactors {
    pub fn new(a: DMatrix<C64>, b: DMatrix<C64>, h: DMatrix<C64>) -> Result<Self> {
        let r = a.ncols();
        if b.ncols() != r || h.ncols() != r {
            return Err(Error::dims(
                "CpdFactors::new",
                format!("{r} columns in every factor"),
                format!("{}, {}, {}", a.ncols(), b.ncols(), h.ncols()),
            ));
        }
        Ok(CpdFactors { a, b, h })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// `(L1, L2, L3)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.h.nrows())
    }

    /// Column-major `vec([[A, B, H]])` without forming the tensor.
    pub fn vectorize(&self) -> Vec<C64> {
        let (l1, l2, l3) = self.shape();
        let mut out = vec![C64::new(0.0, 0.0); l1 * l2 * l3];
        for l in 0..self.rank() {
            let (a, b, h) = (self.a.column(l), self.b.column(l), self.h.column(l));
            for k in 0..l3 {
                for j in 0..l2 {
                    let bh = b[j] * h[k];
                    let base = (k * l2 + j) * l1;
                    for i in 0..l1 {
                        out[base + i] += a[i] * bh;
                    }
                }
            }
        }
        out
    }
}

/// Evaluates `Y[i,j,k] = sum_l A[i,l] B[j,l] H[k,l]`.
pub fn cpd_eval(f: &CpdFactors) -> Tensor {
    let (l1, l2, l3) = f.shape();
    Tensor {
        dims: vec![l1, l2, l3],
        data: f.vectorize(),
    }
}

/// Column-wise Khatri-Rao product: column `l` is `a_l (x) b_l`.
pub fn khatri_rao(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims("khatri_rao", a.ncols(), b.ncols()));
    }
    let (i_len, j_len) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(i_len * j_len, a.ncols(), |row, l| {
        a[(row / j_len, l)] * b[(row % j_len, l)]
    }))
}

/// Kronecker product with the standard block layout `[a_ij B]`.
pub fn kronecker(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}
