//! Partial alternating least squares for a rank-`r` CPD observed only
//! through the sampling operator: `min ||P vec([[A, B, H]]) - y||`.
//!
//! Each block update is an exact linear least-squares solve
//! `vec(X) = Z_X^+ y`, where
//!
//! * `Z_A = P ((H ⊙ B) ⊠ I_L1)`
//! * `Z_B = P [h_1 ⊠ I_L2 ⊠ a_1 .. h_r ⊠ I_L2 ⊠ a_r]`
//! * `Z_H = P [I_L3 ⊠ b_1 ⊠ a_1 .. I_L3 ⊠ b_r ⊠ a_r]`
//!
//! The `Z` matrices are accumulated straight from the nonzeros of `P`, so
//! their cost is `nnz(P) * r` rather than a dense triple product.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{lstsq_pinv, lstsq_pinv_block_diagonal};
use crate::sampling::SamplingOperator;
use crate::tensor::CpdFactors;
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct AlsOptions {
    pub max_cycles: usize,
    /// Stop when `|r_{k-1} - r_k| / r_{k-1}` drops below this.
    pub rel_change_tol: f64,
    /// Singular values below `pinv_cutoff * sigma_max` are discarded.
    pub pinv_cutoff: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Rescale columns of `A` and `B` to unit norm after every cycle.
    pub normalize_each_cycle: bool,
    /// A run counts as converged when its final residual is at most this.
    pub success_residual: f64,
    /// Run restarts on separate threads.
    pub parallel: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_cycles: 250,
            rel_change_tol: 1e-12,
            pinv_cutoff: 1e-12,
            restarts: 10,
            seed: 0,
            normalize_each_cycle: true,
            success_residual: 1e-6,
            parallel: false,
        }
    }
}

impl AlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_cycles == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument(
                "max_cycles and restarts must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("rel_change_tol", self.rel_change_tol),
            ("pinv_cutoff", self.pinv_cutoff),
            ("success_residual", self.success_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Numerical ranks of the last `Z_A`, `Z_B`, `Z_H` solves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockRanks {
    pub a: usize,
    pub b: usize,
    pub h: usize,
}

#[derive(Debug, Clone)]
pub struct AlsResult {
    pub factors: CpdFactors,
    /// Residual at the initialization.
    pub initial_residual: f64,
    /// Residual after each full `A -> B -> H` cycle.
    pub residual_history: Vec<f64>,
    /// Residual after every individual block update, three per cycle.
    pub update_residuals: Vec<f64>,
    pub converged: bool,
    /// The relative-change criterion fired before `max_cycles`.
    pub stopped_early: bool,
    pub cycles_used: usize,
    /// Restart index that produced this run.
    pub restart: usize,
    pub ranks: BlockRanks,
}

impl AlsResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history
            .last()
            .copied()
            .unwrap_or(self.initial_residual)
    }

    /// `cycle,residual` with cycle 0 holding the initial residual.
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "cycle,residual")?;
        writeln!(w, "0,{:e}", self.initial_residual)?;
        for (k, r) in self.residual_history.iter().enumerate() {
            writeln!(w, "{},{:e}", k + 1, r)?;
        }
        Ok(())
    }
}

/// Result of one block update.
#[derive(Debug, Clone)]
pub struct BlockUpdate {
    pub matrix: DMatrix<C64>,
    pub rank: usize,
}

fn check_factor(
    op: &'static str,
    m: &DMatrix<C64>,
    rows: usize,
    rank: Option<usize>,
) -> Result<usize> {
    if m.nrows() != rows {
        return Err(Error::dims(op, format!("{rows} rows"), m.nrows()));
    }
    if let Some(r) = rank {
        if m.ncols() != r {
            return Err(Error::dims(op, format!("{r} columns"), m.ncols()));
        }
    }
    if m.ncols() == 0 {
        return Err(Error::InvalidArgument(format!("{op}: rank must be >= 1")));
    }
    Ok(m.ncols())
}

fn check_rhs(p: &SamplingOperator, y: &DVector<C64>) -> Result<()> {
    if y.len() != p.rows() {
        return Err(Error::dims("ALS data vector", p.rows(), y.len()));
    }
    Ok(())
}

/// `Z_A`, columns ordered as `vec(A)`: column `l*L1 + i`.
pub fn z_matrix_a(
    p: &SamplingOperator,
    b: &DMatrix<C64>,
    h: &DMatrix<C64>,
) -> Result<DMatrix<C64>> {
    let (l1, l2, l3) = p.tensor_shape();
    let r = check_factor("Z_A (B factor)", b, l2, None)?;
    check_factor("Z_A (H factor)", h, l3, Some(r))?;
    let mut z = DMatrix::zeros(p.rows(), l1 * r);
    for e in p.entries() {
        let (i, j, k) = p.unravel(e.col);
        for l in 0..r {
            z[(e.row, l * l1 + i)] += e.value * b[(j, l)] * h[(k, l)];
        }
    }
    Ok(z)
}

/// `Z_B`, column `l*L2 + j`.
pub fn z_matrix_b(
    p: &SamplingOperator,
    a: &DMatrix<C64>,
    h: &DMatrix<C64>,
) -> Result<DMatrix<C64>> {
    let (l1, l2, l3) = p.tensor_shape();
    let r = check_factor("Z_B (A factor)", a, l1, None)?;
    check_factor("Z_B (H factor)", h, l3, Some(r))?;
    let mut z = DMatrix::zeros(p.rows(), l2 * r);
    for e in p.entries() {
        let (i, j, k) = p.unravel(e.col);
        for l in 0..r {
            z[(e.row, l * l2 + j)] += e.value * a[(i, l)] * h[(k, l)];
        }
    }
    Ok(z)
}

/// `Z_H`, column `l*L3 + k`.
pub fn z_matrix_h(
    p: &SamplingOperator,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
) -> Result<DMatrix<C64>> {
    let (l1, l2, l3) = p.tensor_shape();
    let r = check_factor("Z_H (A factor)", a, l1, None)?;
    check_factor("Z_H (B factor)", b, l2, Some(r))?;
    let mut z = DMatrix::zeros(p.rows(), l3 * r);
    for e in p.entries() {
        let (i, j, k) = p.unravel(e.col);
        for l in 0..r {
            z[(e.row, l * l3 + k)] += e.value * a[(i, l)] * b[(j, l)];
        }
    }
    Ok(z)
}

fn solve_block(
    z: &DMatrix<C64>,
    y: &DVector<C64>,
    rows: usize,
    rank: usize,
    cutoff: f64,
) -> Result<BlockUpdate> {
    let sol = lstsq_pinv(z, y, cutoff)?;
    Ok(BlockUpdate {
        matrix: DMatrix::from_column_slice(rows, rank, sol.x.as_slice()),
        rank: sol.rank,
    })
}

pub fn als_update_a(
    p: &SamplingOperator,
    y: &DVector<C64>,
    b: &DMatrix<C64>,
    h: &DMatrix<C64>,
    pinv_cutoff: f64,
) -> Result<BlockUpdate> {
    check_rhs(p, y)?;
    let z = z_matrix_a(p, b, h)?;
    solve_block(&z, y, p.tensor_shape().0, b.ncols(), pinv_cutoff)
}

pub fn als_update_b(
    p: &SamplingOperator,
    y: &DVector<C64>,
    a: &DMatrix<C64>,
    h: &DMatrix<C64>,
    pinv_cutoff: f64,
) -> Result<BlockUpdate> {
    check_rhs(p, y)?;
    let z = z_matrix_b(p, a, h)?;
    solve_block(&z, y, p.tensor_shape().1, a.ncols(), pinv_cutoff)
}

/// `Z_H` is block diagonal: the rows of slice `k` only see row `k` of `H`.
/// The update therefore solves one `L x r` problem per slice, which equals
/// `vec(H) = Z_H^+ y` (see [`lstsq_pinv_block_diagonal`]).
pub fn als_update_h(
    p: &SamplingOperator,
    y: &DVector<C64>,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    pinv_cutoff: f64,
) -> Result<BlockUpdate> {
    check_rhs(p, y)?;
    let (l1, l2, l3) = p.tensor_shape();
    let r = check_factor("Z_H (A factor)", a, l1, None)?;
    check_factor("Z_H (B factor)", b, l2, Some(r))?;
    let memory = p.memory_len();
    let mut blocks = Vec::with_capacity(l3);
    let mut rhs = Vec::with_capacity(l3);
    for k in 0..l3 {
        let rows = p.slice_rows(k);
        let mut zk = DMatrix::zeros(memory, r);
        for e in p.slice_entries(k) {
            let (i, j, _) = p.unravel(e.col);
            for l in 0..r {
                zk[(e.row - rows.start, l)] += e.value * a[(i, l)] * b[(j, l)];
            }
        }
        blocks.push(zk);
        rhs.push(y.rows(rows.start, memory).into_owned());
    }
    let (xs, rank) = lstsq_pinv_block_diagonal(blocks, &rhs, pinv_cutoff)?;
    let matrix = DMatrix::from_fn(l3, r, |k, l| xs[k][l]);
    Ok(BlockUpdate { matrix, rank })
}

/// `||P vec([[A, B, H]]) - y||_2`
pub fn residual(p: &SamplingOperator, y: &DVector<C64>, f: &CpdFactors) -> Result<f64> {
    if f.shape() != p.tensor_shape() {
        return Err(Error::dims(
            "residual",
            format!("{:?}", p.tensor_shape()),
            format!("{:?}", f.shape()),
        ));
    }
    Ok((p.apply(&f.vectorize())? - y).norm())
}

/// I.i.d. standard complex Gaussian factors for restart `restart`.
pub fn random_factors(
    shape: (usize, usize, usize),
    rank: usize,
    seed: u64,
    restart: usize,
) -> CpdFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut draw = |rows: usize| {
        DMatrix::from_fn(rows, rank, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re * scale, im * scale)
        })
    };
    let a = draw(shape.0);
    let b = draw(shape.1);
    let h = draw(shape.2);
    CpdFactors { a, b, h }
}

/// Unit-norm columns in `A` and `B`; the scales move into `H`.
pub fn normalize_factors(f: &mut CpdFactors) {
    for l in 0..f.rank() {
        let na = f.a.column(l).norm();
        let nb = f.b.column(l).norm();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        f.a.column_mut(l).unscale_mut(na);
        f.b.column_mut(l).unscale_mut(nb);
        f.h.column_mut(l).scale_mut(na * nb);
    }
}

/// One ALS run from the given starting factors.
pub fn als_from(
    p: &SamplingOperator,
    y: &DVector<C64>,
    init: CpdFactors,
    opts: &AlsOptions,
) -> Result<AlsResult> {
    opts.validate()?;
    check_rhs(p, y)?;
    let mut f = init;
    let initial_residual = residual(p, y, &f)?;
    let mut history = Vec::with_capacity(opts.max_cycles);
    let mut updates = Vec::with_capacity(3 * opts.max_cycles);
    let mut ranks = BlockRanks::default();
    let mut prev = initial_residual;
    let mut stopped_early = false;
    let cut = opts.pinv_cutoff;

    for _ in 0..opts.max_cycles {
        let ua = als_update_a(p, y, &f.b, &f.h, cut)?;
        f.a = ua.matrix;
        ranks.a = ua.rank;
        updates.push(residual(p, y, &f)?);

        let ub = als_update_b(p, y, &f.a, &f.h, cut)?;
        f.b = ub.matrix;
        ranks.b = ub.rank;
        updates.push(residual(p, y, &f)?);

        let uh = als_update_h(p, y, &f.a, &f.b, cut)?;
        f.h = uh.matrix;
        ranks.h = uh.rank;
        let res = residual(p, y, &f)?;
        updates.push(res);

        if opts.normalize_each_cycle {
            normalize_factors(&mut f);
        }
        history.push(res);
        if res == 0.0 || (prev - res).abs() < opts.rel_change_tol * prev {
            stopped_early = true;
            break;
        }
        prev = res;
    }

    let final_res = history.last().copied().unwrap_or(initial_residual);
    Ok(AlsResult {
        factors: f,
        initial_residual,
        cycles_used: history.len(),
        residual_history: history,
        update_residuals: updates,
        converged: final_res <= opts.success_residual,
        stopped_early,
        restart: 0,
        ranks,
    })
}

/// Runs every restart and returns them in restart order.
pub fn run_restarts(
    p: &SamplingOperator,
    y: &DVector<C64>,
    rank: usize,
    opts: &AlsOptions,
) -> Result<Vec<AlsResult>> {
    opts.validate()?;
    check_rhs(p, y)?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let shape = p.tensor_shape();
    let one = |restart: usize| -> Result<AlsResult> {
        let init = random_factors(shape, rank, opts.seed, restart);
        let mut res = als_from(p, y, init, opts)?;
        res.restart = restart;
        Ok(res)
    };
    if opts.parallel && opts.restarts > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..opts.restarts)
                .map(|k| scope.spawn(move || one(k)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ALS restart thread panicked"))
                .collect()
        })
    } else {
        (0..opts.restarts).map(one).collect()
    }
}

/// Index of the lowest final residual; ties go to the earliest restart.
pub fn best_run(runs: &[AlsResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, run) in runs.iter().enumerate() {
        let r = run.final_residual();
        match best {
            Some(b)
                if r.partial_cmp(&runs[b].final_residual()) != Some(std::cmp::Ordering::Less) => {}
            _ if r.is_nan() => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Best-of-restarts partial ALS.
pub fn partial_als(
    p: &SamplingOperator,
    y: &DVector<C64>,
    rank: usize,
    opts: &AlsOptions,
) -> Result<AlsResult> {
    let mut runs = run_restarts(p, y, rank, opts)?;
    let best = best_run(&runs)
        .ok_or_else(|| Error::InvalidArgument("every ALS restart produced NaN".into()))?;
    Ok(runs.swap_remove(best))
}
