//! Runs an experiment and writes its artifacts.
//!
//! Output directory layout:
//!
//! ```text
//! kernels.txt              synthesized kernels (system configs only)
//! points.txt               operating points, `re im` per line
//! sampling_matrix.txt      sampling operator, `rows cols nnz` then 1-based `row col re im`
//! residuals/restart_XX.csv `cycle,residual`, cycle 0 is the initial residual
//! report.toml              full structured report
//! summary.json             final residuals, flags and aligned errors
//! summary.txt              the same for people
//! ```
//!
//! Nothing time- or host-dependent is written, so two runs with the same
//! config produce identical files.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pwh_core::identification::{
    identify, monic, polyfit, realize_filters, FactorMatch, IdentificationReport, IdentifyOptions,
};
use pwh_core::sampling::build_sampling_matrix;
use pwh_core::volterra::{synthesize_kernels, KernelSet};
use pwh_core::C64;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, LoadError, Source};
use crate::kernel_io::{read_kernels, write_kernels, KernelIoError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Kernel {
        path: PathBuf,
        source: KernelIoError,
    },
    #[error("{0}")]
    Usage(String),
    #[error("identification failed: {0}")]
    Core(#[from] pwh_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    /// 1 for bad input, 2 for I/O failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Io { .. } => 2,
            RunError::Kernel {
                source: KernelIoError::Io(_),
                ..
            } => 2,
            _ => 1,
        }
    }
}

impl From<LoadError> for RunError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { path, source } => RunError::Io { path, source },
            LoadError::Invalid(c) => RunError::Config(c),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `--out`, else the config's `out_dir`, else `out/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

/// Kernels named by the config, synthesized or read, checked against
/// `(L1, L2, d)`.
pub fn load_kernels(cfg: &ExperimentConfig) -> Result<KernelSet, RunError> {
    match &cfg.source {
        Source::System(sys) => Ok(synthesize_kernels(sys)),
        Source::KernelFile(path) => {
            let kernel_err = |source| RunError::Kernel {
                path: path.clone(),
                source,
            };
            let file = File::open(path).map_err(|e| kernel_err(e.into()))?;
            let k = read_kernels(BufReader::new(file)).map_err(kernel_err)?;
            if k.memory_len() != cfg.memory_len() || k.degree() != cfg.degree {
                return Err(kernel_err(KernelIoError::Parse {
                    line: 1,
                    message: format!(
                        "kernels have L = {}, d = {} but the config implies L = L1 + L2 - 1 = {}, d = {}",
                        k.memory_len(),
                        k.degree(),
                        cfg.memory_len(),
                        cfg.degree
                    ),
                }));
            }
            Ok(k)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), RunError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes only `kernels.txt`. Needs a `[system]` config.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, RunError> {
    let Source::System(sys) = &cfg.source else {
        return Err(RunError::Usage(
            "synth needs a config with a [system] table".into(),
        ));
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("kernels.txt");
    let k = synthesize_kernels(sys);
    write_with(&path, |w| write_kernels(&k, w))?;
    Ok(path)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: IdentificationReport,
    pub comparison: Option<FactorMatch>,
    pub derivatives: Derivatives,
    pub summary: Summary,
    pub out_dir: PathBuf,
}

/// Identifies the configured system and writes every artifact to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, RunError> {
    let kernels = load_kernels(cfg)?;
    let opts = IdentifyOptions {
        points_seed: cfg.points_seed,
        als: cfg.als.clone(),
    };
    let report = identify(&kernels, cfg.rank, cfg.l1, cfg.l2, cfg.n_points, &opts)?;
    let comparison = cfg.truth().map(|t| report.compare(t)).transpose()?;
    let derivatives = derivative_polynomials(&report, comparison.as_ref())?;
    let summary = Summary::new(cfg, &report, comparison.as_ref());

    fs::create_dir_all(out.join("residuals")).map_err(io_err(out))?;
    if cfg.truth().is_some() {
        write_with(&out.join("kernels.txt"), |w| write_kernels(&kernels, w))?;
    }
    write_with(&out.join("points.txt"), |w| report.points.write_text(w))?;
    let p = build_sampling_matrix(cfg.l1, cfg.l2, cfg.degree, &report.points)?;
    write_with(&out.join("sampling_matrix.txt"), |w| p.write_triplets(w))?;
    let width = (report.runs.len().saturating_sub(1))
        .to_string()
        .len()
        .max(2);
    for run in &report.runs {
        let path = out.join(format!("residuals/restart_{:0width$}.csv", run.restart));
        write_with(&path, |w| run.write_history_csv(w))?;
    }

    let file = ReportFile::new(cfg, &report, comparison.as_ref(), &derivatives, &summary);
    let text = toml::to_string(&file).map_err(|e| RunError::Usage(e.to_string()))?;
    write_with(&out.join("report.toml"), |w| w.write_all(text.as_bytes()))?;
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| RunError::Usage(e.to_string()))?;
    write_with(&out.join("summary.json"), |w| writeln!(w, "{json}"))?;
    write_with(&out.join("summary.txt"), |w| {
        w.write_all(summary_text(&summary, &derivatives).as_bytes())
    })?;

    Ok(RunOutcome {
        report,
        comparison,
        derivatives,
        summary,
        out_dir: out.to_path_buf(),
    })
}

/// Monic polynomials fitted to `g_l'` samples, ascending powers.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Derivatives {
    /// Abscissas from the estimated unit-norm filters.
    pub estimated: Vec<Vec<f64>>,
    /// Abscissas from the estimate aligned onto the reference filters, one
    /// row per reference branch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aligned: Option<Vec<Vec<f64>>>,
    /// Largest imaginary part dropped from the fitted coefficients.
    pub max_imag: f64,
}

fn fit_monic(
    report: &IdentificationReport,
    h: &DMatrix<C64>,
    a: &DMatrix<f64>,
    max_imag: &mut f64,
) -> Result<Vec<Vec<f64>>, RunError> {
    let degree = report.system.degree() - 1;
    (0..a.ncols())
        .map(|l| {
            let samples = report.derivative_samples_with(h, a, l)?;
            let coeffs = polyfit(&samples, degree)?;
            let re: Vec<f64> = coeffs.iter().map(|z| z.re).collect();
            let lead = coeffs
                .last()
                .map_or(1.0, |z| z.norm())
                .max(f64::MIN_POSITIVE);
            for z in &coeffs {
                *max_imag = max_imag.max(z.im.abs() / lead);
            }
            Ok(monic(&re))
        })
        .collect()
}

fn derivative_polynomials(
    report: &IdentificationReport,
    comparison: Option<&FactorMatch>,
) -> Result<Derivatives, RunError> {
    // a degree-(d-1) fit needs d distinct samples
    if report.points.len() < report.system.degree() {
        return Ok(Derivatives::default());
    }
    let mut max_imag = 0.0;
    let estimated = fit_monic(report, &report.h, &report.system.a, &mut max_imag)?;
    let aligned = comparison
        .map(|m| fit_monic(report, &m.align_h(&report.h), &m.aligned.a, &mut max_imag))
        .transpose()?;
    Ok(Derivatives {
        estimated,
        aligned,
        max_imag,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub permutation: Vec<usize>,
    pub a_error: Vec<f64>,
    pub b_error: Vec<f64>,
    pub c_error: Vec<f64>,
    pub max_filter_error: f64,
    pub max_coeff_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub best_restart: usize,
    pub best_residual: f64,
    pub converged: bool,
    pub flagged: bool,
    pub final_residuals: Vec<f64>,
    pub max_imag_filters: f64,
    pub max_imag_coeffs: f64,
    pub unreliable_branches: Vec<bool>,
    pub row_unknown_ratio: f64,
    pub comparison: Option<Comparison>,
}

impl Summary {
    fn new(
        cfg: &ExperimentConfig,
        report: &IdentificationReport,
        comparison: Option<&FactorMatch>,
    ) -> Self {
        Summary {
            name: cfg.name.clone(),
            best_restart: report.best,
            best_residual: report.final_residual(),
            converged: report.best_run().converged,
            flagged: report.flagged(),
            final_residuals: report.runs.iter().map(|r| r.final_residual()).collect(),
            max_imag_filters: report.max_imag_filters,
            max_imag_coeffs: report.max_imag_coeffs,
            unreliable_branches: report.unreliable_branches.clone(),
            row_unknown_ratio: report.row_unknown_ratio,
            comparison: comparison.map(|m| Comparison {
                permutation: m.permutation.clone(),
                a_error: m.a_error.clone(),
                b_error: m.b_error.clone(),
                c_error: m.c_error.clone(),
                max_filter_error: m.max_filter_error(),
                max_coeff_error: m.max_coeff_error(),
            }),
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn complex_rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    m.row_iter()
        .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

#[derive(Serialize)]
struct ReportFile {
    experiment: ExperimentSection,
    sampling: SamplingSection,
    result: ResultSection,
    estimate: EstimateSection,
    factors: FactorsSection,
    derivative: Derivatives,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<ComparisonSection>,
    restart: Vec<RestartSection>,
}

#[derive(Serialize)]
struct ExperimentSection {
    name: String,
    r: usize,
    #[serde(rename = "L1")]
    l1: usize,
    #[serde(rename = "L2")]
    l2: usize,
    #[serde(rename = "L")]
    l: usize,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    points_seed: u64,
    als_seed: u64,
    restarts: usize,
    max_cycles: usize,
    rel_change_tol: f64,
    pinv_cutoff: f64,
    success_residual: f64,
    normalize_each_cycle: bool,
    source: String,
}

#[derive(Serialize)]
struct SamplingSection {
    rows: usize,
    cols: usize,
    slices: usize,
    row_unknown_ratio: f64,
    gradient_norm: f64,
}

#[derive(Serialize)]
struct ResultSection {
    best_restart: usize,
    best_residual: f64,
    converged: bool,
    flagged: bool,
}

#[derive(Serialize)]
struct EstimateSection {
    max_imag_filters: f64,
    max_imag_coeffs: f64,
    unreliable_branches: Vec<bool>,
    /// `identifiable[l][s-1]`
    identifiable: Vec<Vec<bool>>,
    /// Unit-norm filters with positive leading entry.
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    /// Filters divided by their pivot entry, real parts.
    #[serde(rename = "A_pivot")]
    a_pivot: Vec<Vec<f64>>,
    #[serde(rename = "B_pivot")]
    b_pivot: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct FactorsSection {
    #[serde(rename = "A")]
    a: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "B")]
    b: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "H")]
    h: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct ComparisonSection {
    permutation: Vec<usize>,
    a_scale: Vec<f64>,
    b_scale: Vec<f64>,
    a_error: Vec<f64>,
    b_error: Vec<f64>,
    c_error: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct RestartSection {
    index: usize,
    initial_residual: f64,
    final_residual: f64,
    cycles: usize,
    converged: bool,
    stopped_early: bool,
    rank_a: usize,
    rank_b: usize,
    rank_h: usize,
}

impl ReportFile {
    fn new(
        cfg: &ExperimentConfig,
        report: &IdentificationReport,
        comparison: Option<&FactorMatch>,
        derivatives: &Derivatives,
        summary: &Summary,
    ) -> Self {
        let pivot = realize_filters(&report.factors);
        let l3 = report.h.nrows();
        ReportFile {
            experiment: ExperimentSection {
                name: cfg.name.clone(),
                r: cfg.rank,
                l1: cfg.l1,
                l2: cfg.l2,
                l: cfg.memory_len(),
                d: cfg.degree,
                n: cfg.n_points,
                points_seed: cfg.points_seed,
                als_seed: cfg.als.seed,
                restarts: cfg.als.restarts,
                max_cycles: cfg.als.max_cycles,
                rel_change_tol: cfg.als.rel_change_tol,
                pinv_cutoff: cfg.als.pinv_cutoff,
                success_residual: cfg.als.success_residual,
                normalize_each_cycle: cfg.als.normalize_each_cycle,
                source: match &cfg.source {
                    Source::System(_) => "system".into(),
                    Source::KernelFile(p) => p.display().to_string(),
                },
            },
            sampling: SamplingSection {
                rows: l3 * cfg.memory_len(),
                cols: cfg.l1 * cfg.l2 * l3,
                slices: l3,
                row_unknown_ratio: report.row_unknown_ratio,
                gradient_norm: report.gradient_norm,
            },
            result: ResultSection {
                best_restart: summary.best_restart,
                best_residual: summary.best_residual,
                converged: summary.converged,
                flagged: summary.flagged,
            },
            estimate: EstimateSection {
                max_imag_filters: report.max_imag_filters,
                max_imag_coeffs: report.max_imag_coeffs,
                unreliable_branches: report.unreliable_branches.clone(),
                identifiable: report.identifiable.clone(),
                a: rows(&report.system.a),
                b: rows(&report.system.b),
                c: rows(&report.system.c),
                a_pivot: rows(&pivot.a),
                b_pivot: rows(&pivot.b),
            },
            factors: FactorsSection {
                a: complex_rows(&report.factors.a),
                b: complex_rows(&report.factors.b),
                h: complex_rows(&report.factors.h),
            },
            derivative: derivatives.clone(),
            comparison: comparison.map(|m| ComparisonSection {
                permutation: m.permutation.clone(),
                a_scale: m.a_scale.clone(),
                b_scale: m.b_scale.clone(),
                a_error: m.a_error.clone(),
                b_error: m.b_error.clone(),
                c_error: m.c_error.clone(),
                a: rows(&m.aligned.a),
                b: rows(&m.aligned.b),
                c: rows(&m.aligned.c),
            }),
            restart: report
                .runs
                .iter()
                .map(|run| RestartSection {
                    index: run.restart,
                    initial_residual: run.initial_residual,
                    final_residual: run.final_residual(),
                    cycles: run.cycles_used,
                    converged: run.converged,
                    stopped_early: run.stopped_early,
                    rank_a: run.ranks.a,
                    rank_b: run.ranks.b,
                    rank_h: run.ranks.h,
                })
                .collect(),
        }
    }
}

fn poly_text(coeffs: &[f64]) -> String {
    let mut terms = Vec::new();
    for (p, &c) in coeffs.iter().enumerate().rev() {
        let var = match p {
            0 => String::new(),
            1 => "t".into(),
            _ => format!("t^{p}"),
        };
        let mag = c.abs();
        let body = if p > 0 && (mag - 1.0).abs() < 1e-12 {
            var
        } else {
            format!("{mag:.4}{var}")
        };
        let sign = if c < 0.0 { "-" } else { "+" };
        if terms.is_empty() {
            terms.push(if c < 0.0 { format!("-{body}") } else { body });
        } else {
            terms.push(format!("{sign} {body}"));
        }
    }
    terms.join(" ")
}

pub fn summary_text(s: &Summary, d: &Derivatives) -> String {
    let mut out = String::new();
    let status = if s.flagged { "FLAGGED" } else { "ok" };
    out += &format!("experiment      {}\n", s.name);
    out += &format!("status          {status}\n");
    out += &format!(
        "best restart    {} (residual {:.3e}, converged {})\n",
        s.best_restart, s.best_residual, s.converged
    );
    for (i, r) in s.final_residuals.iter().enumerate() {
        out += &format!("  restart {i:>3}   {r:.3e}\n");
    }
    out += &format!("row/unknown     {:.3}\n", s.row_unknown_ratio);
    out += &format!(
        "dropped imag    filters {:.2e}, coefficients {:.2e}\n",
        s.max_imag_filters, s.max_imag_coeffs
    );
    if let Some(c) = &s.comparison {
        out += &format!(
            "aligned errors  filters {:.3e}, coefficients {:.3e}\n",
            c.max_filter_error, c.max_coeff_error
        );
    }
    let polys = d.aligned.as_ref().unwrap_or(&d.estimated);
    for (l, p) in polys.iter().enumerate() {
        out += &format!("g'_{} monic     {}\n", l + 1, poly_text(p));
    }
    out
}
