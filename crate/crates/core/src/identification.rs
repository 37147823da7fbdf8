//! End-to-end identification: kernels -> gradient samples -> partial ALS ->
//! real filters and polynomial coefficients.
//!
//! The recovered branches follow one scaling convention: every front and
//! back filter has unit Euclidean norm and a positive first nonzero entry,
//! and the polynomial coefficients carry all of the scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::lstsq_pinv;
use crate::recovery::{best_run, run_restarts, AlsOptions, AlsResult};
use crate::sampling::{
    build_gradient_vector, build_sampling_matrix, filter_polynomial, OperatingPoints,
};
use crate::tensor::CpdFactors;
use crate::volterra::{KernelSet, PwhSystem};
use crate::C64;

/// Relative size below which a pivot or `a(mu)` value counts as zero.
const PIVOT_TOL: f64 = 1e-8;
const DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentifyOptions {
    pub points_seed: u64,
    pub als: AlsOptions,
}

/// Real filters extracted from complex CPD factors.
#[derive(Debug, Clone)]
pub struct Realization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Third factor rescaled so that `[[a, b, h]]` is unchanged.
    pub h: DMatrix<C64>,
    /// Largest imaginary part dropped from `a` or `b`.
    pub max_imag: f64,
    /// Branches whose pivot was numerically zero.
    pub unreliable: Vec<bool>,
}

fn pivot_index(col: &[C64]) -> Option<usize> {
    let (imax, vmax) = col
        .iter()
        .enumerate()
        .map(|(i, z)| (i, z.norm()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if vmax == 0.0 || !vmax.is_finite() {
        return None;
    }
    if col[0].norm() > PIVOT_TOL * vmax {
        Some(0)
    } else {
        Some(imax)
    }
}

/// Divides each column of `A` and `B` by its pivot (first entry, or the
/// largest-modulus one when the first is negligible), folds the removed
/// phase and scale into `H`, and keeps the real parts.
pub fn realize_filters(f: &CpdFactors) -> Realization {
    let (l1, l2, _) = f.shape();
    let r = f.rank();
    let mut a = DMatrix::zeros(l1, r);
    let mut b = DMatrix::zeros(l2, r);
    let mut h = f.h.clone();
    let mut max_imag: f64 = 0.0;
    let mut unreliable = vec![false; r];

    for l in 0..r {
        let ac: Vec<C64> = f.a.column(l).iter().copied().collect();
        let bc: Vec<C64> = f.b.column(l).iter().copied().collect();
        let (pa, pb) = match (pivot_index(&ac), pivot_index(&bc)) {
            (Some(i), Some(j)) => (ac[i], bc[j]),
            _ => {
                unreliable[l] = true;
                for (i, z) in ac.iter().enumerate() {
                    a[(i, l)] = z.re;
                }
                for (j, z) in bc.iter().enumerate() {
                    b[(j, l)] = z.re;
                }
                continue;
            }
        };
        for (i, z) in ac.iter().enumerate() {
            let v = z / pa;
            a[(i, l)] = v.re;
            max_imag = max_imag.max(v.im.abs());
        }
        for (j, z) in bc.iter().enumerate() {
            let v = z / pb;
            b[(j, l)] = v.re;
            max_imag = max_imag.max(v.im.abs());
        }
        for x in h.column_mut(l).iter_mut() {
            *x *= pa * pb;
        }
    }
    Realization {
        a,
        b,
        h,
        max_imag,
        unreliable,
    }
}

/// Applies the unit-norm, positive-leading-entry convention to the real
/// filters and pushes the scale into `h`.
fn normalize_branches(real: &mut Realization) {
    for l in 0..real.a.ncols() {
        let mut scale = 1.0;
        for m in [&mut real.a, &mut real.b] {
            let norm = m.column(l).norm();
            if norm == 0.0 {
                continue;
            }
            let sign = m
                .column(l)
                .iter()
                .find(|x| **x != 0.0)
                .map_or(1.0, |x| x.signum());
            m.column_mut(l).unscale_mut(sign * norm);
            scale *= sign * norm;
        }
        real.h.column_mut(l).scale_mut(scale);
    }
}

/// Least-squares polynomial coefficients of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityFit {
    /// `c_1..c_d`, complex as solved.
    pub coeffs: Vec<C64>,
    /// `false` where every `a(mu_k)` of that degree block was negligible.
    pub identifiable: Vec<bool>,
}

fn check_h_len(h: &[C64], pts: &OperatingPoints, degree: usize) -> Result<()> {
    if degree == 0 {
        return Err(Error::InvalidArgument("degree must be >= 1".into()));
    }
    let want = 1 + pts.len() * (degree - 1);
    if h.len() != want {
        return Err(Error::dims("nonlinearity vector", want, h.len()));
    }
    Ok(())
}

/// Solves `h ≈ (c_1, 2 c_2 a(mu_1), .., d c_d a(mu_N)^{d-1})` for `c`.
///
/// The unknowns decouple by degree, so each `c_s` is a one-column least
/// squares problem. Rows with `a(mu_k) ≈ 0` carry no information and are
/// dropped.
pub fn recover_nonlinearity<T: Copy + Into<C64>>(
    h: &[C64],
    a: &[T],
    pts: &OperatingPoints,
    degree: usize,
) -> Result<NonlinearityFit> {
    check_h_len(h, pts, degree)?;
    let n = pts.len();
    let a_scale: f64 = a.iter().map(|&x| x.into().norm()).sum();
    let amu: Vec<C64> = pts
        .as_slice()
        .iter()
        .map(|&mu| filter_polynomial(a, mu))
        .collect();
    let usable: Vec<bool> = amu
        .iter()
        .map(|x| x.norm() > DEGENERATE_TOL * a_scale)
        .collect();

    let mut coeffs = vec![h[0]];
    let mut identifiable = vec![true];
    for s in 2..=degree {
        let block = &h[1 + (s - 2) * n..1 + (s - 1) * n];
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for k in (0..n).filter(|&k| usable[k]) {
            let w = amu[k].powi(s as i32 - 1) * s as f64;
            num += w.conj() * block[k];
            den += w.norm_sqr();
        }
        if den > 0.0 {
            coeffs.push(num / den);
            identifiable.push(true);
        } else {
            coeffs.push(C64::new(0.0, 0.0));
            identifiable.push(false);
        }
    }
    Ok(NonlinearityFit {
        coeffs,
        identifiable,
    })
}

/// `g'(x)` sampled at `x = a(mu_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeSample {
    pub x: C64,
    pub value: C64,
}

/// For each `mu_k`, sums the degree blocks of `h` at that point together
/// with the shared linear entry, giving `g'(a(mu_k))` for model-consistent
/// `h`. The abscissas come from the filter estimate `a`.
pub fn derivative_samples<T: Copy + Into<C64>>(
    h: &[C64],
    a: &[T],
    pts: &OperatingPoints,
    degree: usize,
) -> Result<Vec<DerivativeSample>> {
    check_h_len(h, pts, degree)?;
    let n = pts.len();
    Ok(pts
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &mu)| {
            let value = (2..=degree).fold(h[0], |acc, s| acc + h[1 + (s - 2) * n + k]);
            DerivativeSample {
                x: filter_polynomial(a, mu),
                value,
            }
        })
        .collect())
}

/// Least-squares polynomial of the given degree through the samples.
/// Coefficients are returned in ascending powers.
pub fn polyfit(samples: &[DerivativeSample], degree: usize) -> Result<Vec<C64>> {
    if samples.len() < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for a degree-{degree} fit, got {}",
            degree + 1,
            samples.len()
        )));
    }
    let v = DMatrix::from_fn(samples.len(), degree + 1, |k, p| {
        samples[k].x.powi(p as i32)
    });
    let rhs = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.value));
    let sol = lstsq_pinv(&v, &rhs, 1e-14)?;
    Ok(sol.x.iter().copied().collect())
}

/// Divides by the highest-power coefficient.
pub fn monic(coeffs: &[f64]) -> Vec<f64> {
    match coeffs.last() {
        Some(&lead) if lead != 0.0 => coeffs.iter().map(|c| c / lead).collect(),
        _ => coeffs.to_vec(),
    }
}

/// Alignment of an estimated system to a reference one.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatch {
    /// `permutation[m]` is the estimated branch matched to reference branch `m`.
    pub permutation: Vec<usize>,
    /// Scale applied to the matched estimated front filter.
    pub a_scale: Vec<f64>,
    pub b_scale: Vec<f64>,
    /// Relative errors per reference branch after alignment.
    pub a_error: Vec<f64>,
    pub b_error: Vec<f64>,
    pub c_error: Vec<f64>,
    /// Estimated system permuted and rescaled onto the reference.
    pub aligned: PwhSystem,
}

impl FactorMatch {
    pub fn max_filter_error(&self) -> f64 {
        self.a_error
            .iter()
            .chain(&self.b_error)
            .fold(0.0, |m, &e| m.max(e))
    }

    pub fn max_coeff_error(&self) -> f64 {
        self.c_error.iter().fold(0.0, |m, &e| m.max(e))
    }

    /// Permutes and rescales an estimated third factor consistently with
    /// the filter alignment, `h -> h / (alpha beta)`.
    pub fn align_h(&self, h: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(h.nrows(), self.permutation.len());
        for (m, &l) in self.permutation.iter().enumerate() {
            let s = self.a_scale[m] * self.b_scale[m];
            out.set_column(m, &h.column(l).unscale(s));
        }
        out
    }
}

fn rel_err(x: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

fn best_scale(est: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let den: f64 = est.iter().map(|a| a * a).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn col(m: &DMatrix<f64>, l: usize) -> Vec<f64> {
    m.column(l).iter().copied().collect()
}

/// Scaled filter errors of estimated branch `l` against reference branch `m`.
fn pair_errors(est: &PwhSystem, truth: &PwhSystem, l: usize, m: usize) -> (f64, f64, f64, f64) {
    let (ae, at) = (col(&est.a, l), col(&truth.a, m));
    let (be, bt) = (col(&est.b, l), col(&truth.b, m));
    let alpha = best_scale(&ae, &at);
    let beta = best_scale(&be, &bt);
    let ea = rel_err(&ae.iter().map(|x| x * alpha).collect::<Vec<_>>(), &at);
    let eb = rel_err(&be.iter().map(|x| x * beta).collect::<Vec<_>>(), &bt);
    (alpha, beta, ea, eb)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot.abs() / (nx * ny)
    }
}

/// Finds the branch permutation and per-branch filter scalings that best
/// map `est` onto `truth`, then compares polynomial coefficients under the
/// compensating scaling `c_s -> c_s / (beta alpha^s)`.
///
/// All permutations are tried for up to four branches; larger models are
/// matched greedily by normalized filter correlation.
pub fn match_factors(est: &PwhSystem, truth: &PwhSystem) -> Result<FactorMatch> {
    let r = truth.branches();
    if est.branches() != r
        || est.front_len() != truth.front_len()
        || est.back_len() != truth.back_len()
    {
        return Err(Error::dims(
            "match_factors",
            format!(
                "(r, L1, L2) = ({r}, {}, {})",
                truth.front_len(),
                truth.back_len()
            ),
            format!(
                "({}, {}, {})",
                est.branches(),
                est.front_len(),
                est.back_len()
            ),
        ));
    }

    let cost = |l: usize, m: usize| {
        let (_, _, ea, eb) = pair_errors(est, truth, l, m);
        ea + eb
    };
    let permutation = if r <= 4 {
        permutations(r)
            .into_iter()
            .map(|p| {
                let total: f64 = p.iter().enumerate().map(|(m, &l)| cost(l, m)).sum();
                (total, p)
            })
            .fold(None::<(f64, Vec<usize>)>, |best, cand| match best {
                Some(b) if b.0 <= cand.0 => Some(b),
                _ => Some(cand),
            })
            .map(|(_, p)| p)
            .unwrap_or_default()
    } else {
        let mut taken = vec![false; r];
        let mut perm = vec![0; r];
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(r * r);
        for m in 0..r {
            for l in 0..r {
                let score = correlation(&col(&est.a, l), &col(&truth.a, m))
                    + correlation(&col(&est.b, l), &col(&truth.b, m));
                pairs.push((score, l, m));
            }
        }
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut assigned = vec![false; r];
        for (_, l, m) in pairs {
            if !taken[l] && !assigned[m] {
                taken[l] = true;
                assigned[m] = true;
                perm[m] = l;
            }
        }
        perm
    };

    let d = est.degree().min(truth.degree());
    let mut aligned_a = DMatrix::zeros(est.front_len(), r);
    let mut aligned_b = DMatrix::zeros(est.back_len(), r);
    let mut aligned_c = DMatrix::zeros(est.degree(), r);
    let mut aligned_const = vec![0.0; r];
    let (mut a_scale, mut b_scale) = (vec![0.0; r], vec![0.0; r]);
    let (mut a_error, mut b_error, mut c_error) = (vec![0.0; r], vec![0.0; r], vec![0.0; r]);
    for (m, &l) in permutation.iter().enumerate() {
        let (alpha, beta, ea, eb) = pair_errors(est, truth, l, m);
        a_scale[m] = alpha;
        b_scale[m] = beta;
        a_error[m] = ea;
        b_error[m] = eb;
        aligned_a.set_column(m, &(est.a.column(l) * alpha));
        aligned_b.set_column(m, &(est.b.column(l) * beta));
        if alpha != 0.0 && beta != 0.0 {
            for s in 1..=est.degree() {
                aligned_c[(s - 1, m)] = est.c[(s - 1, l)] / (beta * alpha.powi(s as i32));
            }
            aligned_const[m] = est.const0[l] / beta;
        }
        let ce: Vec<f64> = (0..d).map(|s| aligned_c[(s, m)]).collect();
        let ct: Vec<f64> = (0..d).map(|s| truth.c[(s, m)]).collect();
        c_error[m] = if alpha != 0.0 && beta != 0.0 {
            rel_err(&ce, &ct)
        } else {
            1.0
        };
    }
    let aligned = PwhSystem {
        a: aligned_a,
        b: aligned_b,
        c: aligned_c,
        const0: aligned_const,
    };
    Ok(FactorMatch {
        permutation,
        a_scale,
        b_scale,
        a_error,
        b_error,
        c_error,
        aligned,
    })
}

#[derive(Debug, Clone)]
pub struct IdentificationReport {
    /// Real estimated system under the unit-norm branch convention.
    pub system: PwhSystem,
    /// Best ALS factors as returned by the solver.
    pub factors: CpdFactors,
    /// Third factor consistent with `system`'s filters.
    pub h: DMatrix<C64>,
    pub points: OperatingPoints,
    /// Largest imaginary part discarded while realizing the filters.
    pub max_imag_filters: f64,
    /// Largest imaginary part discarded from the polynomial coefficients.
    pub max_imag_coeffs: f64,
    pub unreliable_branches: Vec<bool>,
    /// `identifiable[l][s-1]` for each branch and degree.
    pub identifiable: Vec<Vec<bool>>,
    pub runs: Vec<AlsResult>,
    pub best: usize,
    pub gradient_norm: f64,
    pub row_unknown_ratio: f64,
}

impl IdentificationReport {
    pub fn best_run(&self) -> &AlsResult {
        &self.runs[self.best]
    }

    pub fn final_residual(&self) -> f64 {
        self.best_run().final_residual()
    }

    /// ALS did not reach its success threshold, or a branch could not be
    /// realized or fully identified.
    pub fn flagged(&self) -> bool {
        !self.best_run().converged
            || self.unreliable_branches.iter().any(|&u| u)
            || self.identifiable.iter().flatten().any(|&ok| !ok)
    }

    pub fn compare(&self, truth: &PwhSystem) -> Result<FactorMatch> {
        match_factors(&self.system, truth)
    }

    /// Derivative samples of branch `l` using `a` as abscissa filter and the
    /// third factor `h` consistent with it.
    pub fn derivative_samples_with(
        &self,
        h: &DMatrix<C64>,
        a: &DMatrix<f64>,
        l: usize,
    ) -> Result<Vec<DerivativeSample>> {
        let hl: Vec<C64> = h.column(l).iter().copied().collect();
        let al: Vec<f64> = a.column(l).iter().copied().collect();
        derivative_samples(&hl, &al, &self.points, self.system.degree())
    }
}

/// Runs the full pipeline with freshly generated operating points.
pub fn identify(
    k: &KernelSet,
    rank: usize,
    l1: usize,
    l2: usize,
    n_points: usize,
    opts: &IdentifyOptions,
) -> Result<IdentificationReport> {
    let pts = OperatingPoints::generate(n_points, opts.points_seed)?;
    identify_at(k, rank, l1, l2, pts, &opts.als)
}

/// Runs the full pipeline at the given operating points.
pub fn identify_at(
    k: &KernelSet,
    rank: usize,
    l1: usize,
    l2: usize,
    pts: OperatingPoints,
    als: &AlsOptions,
) -> Result<IdentificationReport> {
    if rank == 0 || l1 == 0 || l2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "r, L1, L2 must be >= 1 (got {rank}, {l1}, {l2})"
        )));
    }
    if k.memory_len() != l1 + l2 - 1 {
        return Err(Error::dims(
            "identify",
            format!("kernel memory L1 + L2 - 1 = {}", l1 + l2 - 1),
            k.memory_len(),
        ));
    }
    let degree = k.degree();
    let p = build_sampling_matrix(l1, l2, degree, &pts)?;
    let y = build_gradient_vector(k, &pts)?;
    let runs = run_restarts(&p, &y, rank, als)?;
    let best = best_run(&runs)
        .ok_or_else(|| Error::InvalidArgument("every ALS restart produced NaN".into()))?;
    let factors = runs[best].factors.clone();

    let mut real = realize_filters(&factors);
    normalize_branches(&mut real);

    let mut c = DMatrix::zeros(degree, rank);
    let mut identifiable = Vec::with_capacity(rank);
    let mut max_imag_coeffs: f64 = 0.0;
    for l in 0..rank {
        let hl: Vec<C64> = real.h.column(l).iter().copied().collect();
        let al: Vec<f64> = real.a.column(l).iter().copied().collect();
        let fit = recover_nonlinearity(&hl, &al, &pts, degree)?;
        for (s, z) in fit.coeffs.iter().enumerate() {
            c[(s, l)] = z.re;
            max_imag_coeffs = max_imag_coeffs.max(z.im.abs());
        }
        identifiable.push(fit.identifiable);
    }
    let system = PwhSystem {
        a: real.a,
        b: real.b,
        c,
        const0: vec![0.0; rank],
    };
    Ok(IdentificationReport {
        system,
        factors,
        h: real.h,
        max_imag_filters: real.max_imag,
        max_imag_coeffs,
        unreliable_branches: real.unreliable,
        identifiable,
        row_unknown_ratio: p.row_unknown_ratio(rank),
        gradient_norm: y.norm(),
        points: pts,
        runs,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::nonlinearity_vector;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn cm(rows: usize, cols: usize, v: &[f64]) -> DMatrix<C64> {
        DMatrix::from_column_slice(rows, cols, v).map(re)
    }

    #[test]
    fn realize_keeps_real_factors() {
        let f = CpdFactors::new(
            cm(3, 1, &[1.0, -2.0, 0.5]),
            cm(2, 1, &[1.0, 4.0]),
            cm(2, 1, &[3.0, 1.0]),
        )
        .unwrap();
        let real = realize_filters(&f);
        assert_eq!(real.a, DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]));
        assert_eq!(real.b, DMatrix::from_column_slice(2, 1, &[1.0, 4.0]));
        assert_eq!(real.max_imag, 0.0);
        assert_eq!(real.h, f.h);
    }

    #[test]
    fn realize_removes_column_phase() {
        let base = CpdFactors::new(
            cm(3, 2, &[0.3, -0.4, 0.1, 0.6, 0.2, 0.3]),
            cm(2, 2, &[0.3, 0.2, 0.2, 0.3]),
            cm(2, 2, &[1.0, 2.0, -1.0, 0.5]),
        )
        .unwrap();
        let mut rotated = base.clone();
        for (l, theta) in [0.7, -2.1].into_iter().enumerate() {
            let ph = C64::from_polar(1.0, theta);
            for x in rotated.a.column_mut(l).iter_mut() {
                *x *= ph;
            }
            for x in rotated.b.column_mut(l).iter_mut() {
                *x *= ph * 3.0;
            }
            for x in rotated.h.column_mut(l).iter_mut() {
                *x /= ph * ph * 3.0;
            }
        }
        let x = realize_filters(&base);
        let y = realize_filters(&rotated);
        assert!(y.max_imag < 1e-12);
        assert!((x.a - y.a).norm() < 1e-12);
        assert!((x.b - y.b).norm() < 1e-12);
        assert!((x.h - y.h).norm() < 1e-12);
    }

    #[test]
    fn realize_uses_largest_entry_when_first_vanishes() {
        let f = CpdFactors::new(
            cm(3, 1, &[0.0, 2.0, -1.0]),
            cm(1, 1, &[1.0]),
            cm(1, 1, &[1.0]),
        )
        .unwrap();
        let real = realize_filters(&f);
        assert_eq!(real.a.as_slice(), &[0.0, 1.0, -0.5]);
        assert!(!real.unreliable[0]);

        let zero =
            CpdFactors::new(cm(2, 1, &[0.0, 0.0]), cm(1, 1, &[1.0]), cm(1, 1, &[1.0])).unwrap();
        assert!(realize_filters(&zero).unreliable[0]);
    }

    #[test]
    fn nonlinearity_recovered_from_consistent_h() {
        let pts = OperatingPoints::generate(6, 3).unwrap();
        let a = [0.3, -0.4, 0.1];
        let c = [re(0.5), re(-1.0), re(3.0), re(0.25)];
        let h = nonlinearity_vector(&a, &c, &pts);
        let fit = recover_nonlinearity(&h, &a, &pts, 4).unwrap();
        for (x, y) in fit.coeffs.iter().zip(c) {
            assert!((x - y).norm() < 1e-10);
        }
        assert!(fit.identifiable.iter().all(|&ok| ok));
    }

    #[test]
    fn linear_degree_reads_first_entry() {
        let pts = OperatingPoints::generate(3, 1).unwrap();
        let fit = recover_nonlinearity(&[C64::new(2.0, -1.0)], &[1.0], &pts, 1).unwrap();
        assert_eq!(fit.coeffs, vec![C64::new(2.0, -1.0)]);
        assert!(recover_nonlinearity(&[re(1.0), re(2.0)], &[1.0], &pts, 1).is_err());
    }

    #[test]
    fn vanishing_filter_polynomial_flags_degree() {
        // a(mu) = 1 + mu vanishes at mu = -1
        let pts = OperatingPoints::new(vec![re(-1.0)]).unwrap();
        let h = [re(1.0), re(0.3), re(0.2)];
        let fit = recover_nonlinearity(&h, &[1.0, 1.0], &pts, 3).unwrap();
        assert_eq!(fit.identifiable, vec![true, false, false]);
        assert_eq!(fit.coeffs[1], re(0.0));
    }

    #[test]
    fn derivative_samples_of_square() {
        // g(x) = x^2: h = (0, 2 a(mu_k)), samples should be 2 a(mu_k)
        let pts = OperatingPoints::generate(5, 9).unwrap();
        let a = [1.0, 0.5];
        let h = nonlinearity_vector(&a, &[re(0.0), re(1.0)], &pts);
        let samples = derivative_samples(&h, &a, &pts, 2).unwrap();
        for s in &samples {
            assert!((s.value - s.x * 2.0).norm() < 1e-14);
        }
        let p = polyfit(&samples, 1).unwrap();
        assert!((p[0]).norm() < 1e-12 && (p[1] - re(2.0)).norm() < 1e-12);
    }

    #[test]
    fn monic_normalization() {
        assert_eq!(monic(&[0.0, -2.0, 9.0])[2], 1.0);
        assert_eq!(monic(&[1.0, 0.0]), vec![1.0, 0.0]);
    }

    fn sys2() -> PwhSystem {
        PwhSystem::new(
            DMatrix::from_column_slice(3, 2, &[0.3, -0.4, 0.1, 0.6, 0.2, 0.3]),
            DMatrix::from_column_slice(3, 2, &[0.3, 0.2, 0.1, 0.2, 0.3, 0.01]),
            DMatrix::from_column_slice(3, 2, &[0.0, -1.0, 3.0, 3.0, 0.0, -5.0]),
            vec![5.0, -7.0],
        )
        .unwrap()
    }

    #[test]
    fn match_identical_systems() {
        let s = sys2();
        let m = match_factors(&s, &s).unwrap();
        assert_eq!(m.permutation, vec![0, 1]);
        assert!(m.max_filter_error() < 1e-15);
        assert!(m.max_coeff_error() < 1e-15);
    }

    #[test]
    fn match_swapped_and_scaled() {
        let t = sys2();
        let (alpha, beta) = ([2.0, -0.5], [-3.0, 0.25]);
        let mut est = t.clone();
        for l in 0..2 {
            let src = 1 - l;
            est.a.set_column(l, &(t.a.column(src) * alpha[l]));
            est.b.set_column(l, &(t.b.column(src) * beta[l]));
            for s in 1..=3 {
                // same input-output map: c_s -> c_s / (beta alpha^s)
                est.c[(s - 1, l)] = t.c[(s - 1, src)] / (beta[l] * alpha[l].powi(s as i32));
            }
        }
        let m = match_factors(&est, &t).unwrap();
        assert_eq!(m.permutation, vec![1, 0]);
        assert!(m.max_filter_error() < 1e-14);
        assert!(m.max_coeff_error() < 1e-13);
        assert!((m.aligned.a.clone() - &t.a).norm() < 1e-14);
    }

    #[test]
    fn match_rejects_shape_mismatch() {
        let t = sys2();
        let one = PwhSystem::new(
            t.a.columns(0, 1).into_owned(),
            t.b.columns(0, 1).into_owned(),
            t.c.columns(0, 1).into_owned(),
            vec![0.0],
        )
        .unwrap();
        assert!(match_factors(&one, &t).is_err());
    }
}
