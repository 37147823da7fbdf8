//! Complex least squares through a truncated pseudoinverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

/// Minimum-norm least-squares solution with the numerical rank it used.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DVector<C64>,
    pub rank: usize,
}

/// Solves `min ||Z x - y||` with `x = Z^+ y`, where singular values below
/// `rcond * sigma_max` are treated as zero.
///
/// Tall systems are first compressed with a thin QR so the SVD runs on the
/// square `R` factor: `(QR)^+ = R^+ Q^H` because `Q` has orthonormal columns.
pub fn lstsq_pinv(z: &DMatrix<C64>, y: &DVector<C64>, rcond: f64) -> Result<LstsqSolution> {
    let (m, n) = z.shape();
    if y.len() != m {
        return Err(Error::dims("lstsq_pinv", m, y.len()));
    }
    if n == 0 {
        return Ok(LstsqSolution {
            x: DVector::zeros(0),
            rank: 0,
        });
    }
    if m > n {
        let qr = z.clone().qr();
        let qhy = qr.q().ad_mul(y);
        let r = qr.r();
        return lstsq_svd(r, qhy, rcond);
    }
    lstsq_svd(z.clone(), y.clone(), rcond)
}

struct Svd {
    u: DMatrix<C64>,
    sigma: DVector<f64>,
    v_t: DMatrix<C64>,
}

impl Svd {
    fn new(z: DMatrix<C64>) -> Result<Self> {
        let svd = z.svd(true, true);
        match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => Ok(Svd {
                u,
                sigma: svd.singular_values,
                v_t,
            }),
            _ => Err(Error::InvalidArgument(
                "SVD did not return singular vectors".into(),
            )),
        }
    }

    fn max_singular_value(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0_f64, f64::max)
    }

    /// `V Sigma^+ U^H y` keeping singular values above `cutoff`.
    fn solve(&self, y: &DVector<C64>, cutoff: f64) -> (DVector<C64>, usize) {
        let mut x = DVector::zeros(self.v_t.ncols());
        let mut rank = 0;
        for (k, &s) in self.sigma.iter().enumerate() {
            if s <= cutoff || s == 0.0 {
                continue;
            }
            rank += 1;
            let coef = self.u.column(k).dotc(y) / s;
            // v_k is the conjugate of row k of V^H
            for (xi, vk) in x.iter_mut().zip(self.v_t.row(k).iter()) {
                *xi += vk.conj() * coef;
            }
        }
        (x, rank)
    }
}

fn lstsq_svd(z: DMatrix<C64>, y: DVector<C64>, rcond: f64) -> Result<LstsqSolution> {
    let svd = Svd::new(z)?;
    let (x, rank) = svd.solve(&y, rcond * svd.max_singular_value());
    Ok(LstsqSolution { x, rank })
}

/// Least squares for a block-diagonal system `diag(Z_1, .., Z_K) x = y`.
///
/// The pseudoinverse of a block-diagonal matrix is the block-diagonal of
/// the blockwise pseudoinverses, so each block is solved on its own; the
/// cutoff is taken relative to the largest singular value over all blocks,
/// which reproduces the truncation of the assembled matrix. Returns one
/// solution per block and the total rank.
pub fn lstsq_pinv_block_diagonal(
    blocks: Vec<DMatrix<C64>>,
    rhs: &[DVector<C64>],
    rcond: f64,
) -> Result<(Vec<DVector<C64>>, usize)> {
    if blocks.len() != rhs.len() {
        return Err(Error::dims(
            "lstsq_pinv_block_diagonal",
            blocks.len(),
            rhs.len(),
        ));
    }
    for (z, y) in blocks.iter().zip(rhs) {
        if z.nrows() != y.len() {
            return Err(Error::dims("lstsq_pinv_block_diagonal", z.nrows(), y.len()));
        }
    }
    let svds = blocks
        .into_iter()
        .map(Svd::new)
        .collect::<Result<Vec<_>>>()?;
    let smax = svds.iter().map(Svd::max_singular_value).fold(0.0, f64::max);
    let mut total = 0;
    let xs = svds
        .iter()
        .zip(rhs)
        .map(|(svd, y)| {
            let (x, rank) = svd.solve(y, rcond * smax);
            total += rank;
            x
        })
        .collect();
    Ok((xs, total))
}

/// Euclidean norm of `Z x - y`.
pub fn residual_norm(z: &DMatrix<C64>, x: &DVector<C64>, y: &DVector<C64>) -> f64 {
    (z * x - y).norm()
}
