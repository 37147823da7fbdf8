//! Experiment configuration files.
//!
//! A config is TOML. Matrices are lists of rows.
//!
//! ```toml
//! name = "demo"
//! r = 2
//! L1 = 3
//! L2 = 3
//! d = 3
//! N = 30
//! out_dir = "out/demo"          # optional
//!
//! [seeds]
//! points = 0
//! als = 0
//!
//! [als]                         # every key optional
//! restarts = 10
//! max_cycles = 250
//! rel_change_tol = 1e-12
//! pinv_cutoff = 1e-12
//! normalize_each_cycle = true
//! success_residual = 1e-6
//! parallel_restarts = false
//!
//! [system]                      # or: kernel_file = "kernels.txt"
//! A = [[0.3, 0.6], [-0.4, 0.2], [0.1, 0.3]]
//! B = [[0.3, 0.2], [0.2, 0.3], [0.1, 0.01]]
//! C = [[0, 3], [-1, 0], [3, -5]]    # row s holds the x^s coefficients
//! const0 = [5, -7]                  # optional, defaults to zeros
//! ```

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pwh_core::recovery::AlsOptions;
use pwh_core::volterra::PwhSystem;
use serde::Deserialize;
use thiserror::Error;

pub const PAPER_SEC5: &str = include_str!("../configs/paper_sec5.toml");

/// Names accepted in place of a path and resolved to embedded configs.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "paper_sec5" => Some(PAPER_SEC5),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub struct ConfigError {
    pub origin: String,
    /// 1-based line the problem was found on.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.origin, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    r: usize,
    #[serde(rename = "L1")]
    l1: usize,
    #[serde(rename = "L2")]
    l2: usize,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    out_dir: Option<PathBuf>,
    seeds: RawSeeds,
    #[serde(default)]
    als: RawAls,
    system: Option<RawSystem>,
    kernel_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    points: u64,
    als: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAls {
    restarts: Option<usize>,
    max_cycles: Option<usize>,
    rel_change_tol: Option<f64>,
    pinv_cutoff: Option<f64>,
    normalize_each_cycle: Option<bool>,
    success_residual: Option<f64>,
    parallel_restarts: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    const0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    System(PwhSystem),
    /// Absolute, or relative to the config file's directory.
    KernelFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub rank: usize,
    pub l1: usize,
    pub l2: usize,
    pub degree: usize,
    pub n_points: usize,
    pub points_seed: u64,
    pub als: AlsOptions,
    pub source: Source,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn memory_len(&self) -> usize {
        self.l1 + self.l2 - 1
    }

    pub fn truth(&self) -> Option<&PwhSystem> {
        match &self.source {
            Source::System(s) => Some(s),
            Source::KernelFile(_) => None,
        }
    }

    /// Reads a config from disk, or one of the bundled names.
    pub fn load(arg: &str) -> Result<Self, LoadError> {
        if let Some(text) = bundled(arg) {
            return Ok(Self::parse(text, arg, Path::new("."))?);
        }
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, arg, base)?)
    }

    /// Parses and validates `text`. Relative kernel paths are joined to `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let err = |line: usize, message: String| ConfigError {
            origin: origin.to_string(),
            line,
            message,
        };
        let at = |key: &str, message: String| err(key_line(text, key), message);

        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of_offset(text, s.start));
            err(line, e.message().trim().to_string())
        })?;

        for (key, v) in [("r", raw.r), ("L1", raw.l1), ("L2", raw.l2), ("d", raw.d)] {
            if v == 0 {
                return Err(at(key, format!("{key} must be at least 1")));
            }
        }
        if raw.n == 0 {
            return Err(at("N", "N must be at least 1".into()));
        }
        if raw.name.is_empty() || raw.name.contains(['/', '\\']) {
            return Err(at("name", format!("`{}` is not a usable name", raw.name)));
        }

        for (key, v) in [
            ("restarts", raw.als.restarts),
            ("max_cycles", raw.als.max_cycles),
        ] {
            if v == Some(0) {
                return Err(at(key, format!("{key} must be at least 1")));
            }
        }
        for (key, v) in [
            ("rel_change_tol", raw.als.rel_change_tol),
            ("pinv_cutoff", raw.als.pinv_cutoff),
            ("success_residual", raw.als.success_residual),
        ] {
            if let Some(x) = v.filter(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(at(
                    key,
                    format!("{key} must be positive and finite, got {x}"),
                ));
            }
        }

        let defaults = AlsOptions::default();
        let als = AlsOptions {
            max_cycles: raw.als.max_cycles.unwrap_or(defaults.max_cycles),
            rel_change_tol: raw.als.rel_change_tol.unwrap_or(defaults.rel_change_tol),
            pinv_cutoff: raw.als.pinv_cutoff.unwrap_or(defaults.pinv_cutoff),
            restarts: raw.als.restarts.unwrap_or(defaults.restarts),
            seed: raw.seeds.als,
            normalize_each_cycle: raw
                .als
                .normalize_each_cycle
                .unwrap_or(defaults.normalize_each_cycle),
            success_residual: raw
                .als
                .success_residual
                .unwrap_or(defaults.success_residual),
            parallel: raw.als.parallel_restarts.unwrap_or(defaults.parallel),
        };
        als.validate().map_err(|e| at("[als]", e.to_string()))?;

        let source = match (raw.system, raw.kernel_file) {
            (Some(_), Some(_)) => {
                return Err(at(
                    "kernel_file",
                    "give either [system] or kernel_file, not both".into(),
                ))
            }
            (None, None) => return Err(err(1, "missing [system] table or kernel_file".into())),
            (None, Some(p)) => Source::KernelFile(if p.is_absolute() { p } else { base.join(p) }),
            (Some(sys), None) => {
                let dims = Dims {
                    r: raw.r,
                    l1: raw.l1,
                    l2: raw.l2,
                    d: raw.d,
                };
                Source::System(build_system(sys, &dims, &at)?)
            }
        };

        Ok(ExperimentConfig {
            name: raw.name,
            rank: raw.r,
            l1: raw.l1,
            l2: raw.l2,
            degree: raw.d,
            n_points: raw.n,
            points_seed: raw.seeds.points,
            als,
            source,
            out_dir: raw.out_dir,
        })
    }
}

struct Dims {
    r: usize,
    l1: usize,
    l2: usize,
    d: usize,
}

fn build_system(
    sys: RawSystem,
    dims: &Dims,
    at: &dyn Fn(&str, String) -> ConfigError,
) -> Result<PwhSystem, ConfigError> {
    let a = matrix(&sys.a, dims.l1, dims.r, "A", "L1", at)?;
    let b = matrix(&sys.b, dims.l2, dims.r, "B", "L2", at)?;
    let c = matrix(&sys.c, dims.d, dims.r, "C", "d", at)?;
    let const0 = sys.const0.unwrap_or_else(|| vec![0.0; dims.r]);
    if const0.len() != dims.r {
        return Err(at(
            "const0",
            format!(
                "const0 has {} entries, expected r = {}",
                const0.len(),
                dims.r
            ),
        ));
    }
    PwhSystem::new(a, b, c, const0).map_err(|e| at("[system]", e.to_string()))
}

fn matrix(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    key: &str,
    dim_name: &str,
    at: &dyn Fn(&str, String) -> ConfigError,
) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != nrows {
        return Err(at(
            key,
            format!(
                "{key} has {} rows, expected {dim_name} = {nrows}",
                rows.len()
            ),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(at(
                key,
                format!(
                    "row {} of {key} has {} entries, expected r = {ncols}",
                    i + 1,
                    row.len()
                ),
            ));
        }
        if let Some(x) = row.iter().find(|x| !x.is_finite()) {
            return Err(at(key, format!("{key} contains non-finite value {x}")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment or `[key]` header, else 1.
fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|line| {
            let t = line.trim_start();
            if key.starts_with('[') {
                return t.starts_with(key);
            }
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(1, |i| i + 1)
}
