//! Experiment configuration: a flat TOML file with dotted keys.
//!
//! ```toml
//! dim = 2
//! nx = 32
//! ny = 32
//! nt = 10
//! T = 0.5
//! p.expr = "3"
//! q.expr = "2.9 + 0.05*x"
//! a.expr = "0.5"
//! b.file = "b.csv"          # checkpoint-format samples, relative to the config
//! f = 1.0
//! u0.expr = "sin(pi*x)*sin(pi*y)"
//! alpha = 1.0
//! sigma = 8.0
//! r = 3.0
//! d = 20.0
//! eps.start = 0.1
//! eps.factor = 0.1
//! eps.count = 5
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::grid::{Grid, GridError};
use crate::harness::default_s_list;
use crate::io::{read_grid_function, IoError};
use crate::problem::{Field, ProblemError, ProblemSpec, SampledField};
use crate::solver::{LinearSolver, NewtonConfig, SolverError, DEFAULT_CONTINUATION_THRESHOLD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("field '{field}': {source}")]
    Expr { field: String, source: ExprError },
    #[error("field '{field}': {source}")]
    File { field: String, source: IoError },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Newton(#[from] SolverError),
}

/// A field given as a number, `{ expr = "..." }` or `{ file = "..." }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Value(f64),
    Table {
        #[serde(default)]
        expr: Option<String>,
        #[serde(default)]
        file: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSection {
    pub start: Option<f64>,
    pub factor: Option<f64>,
    pub count: Option<usize>,
    pub schedule: Option<Vec<f64>>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub max_backtracks: Option<usize>,
    /// `"cg"`, `"banded"` or `"auto"`.
    pub linear_solver: Option<String>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dim: usize,
    pub nx: usize,
    pub ny: Option<usize>,
    pub nt: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "Lx")]
    pub lx: Option<f64>,
    #[serde(rename = "Ly")]
    pub ly: Option<f64>,
    pub p: FieldSource,
    pub q: FieldSource,
    pub a: FieldSource,
    pub b: FieldSource,
    pub f: FieldSource,
    pub u0: FieldSource,
    pub alpha: f64,
    pub sigma: f64,
    pub r: f64,
    pub d: f64,
    pub eps: EpsSection,
    pub seed: u64,
    #[serde(default)]
    pub s_list: Option<Vec<f64>>,
    #[serde(default)]
    pub newton: NewtonSection,
}

/// Parsed configuration ready to run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub base_dir: PathBuf,
    pub spec: ProblemSpec,
    pub newton: NewtonConfig,
    pub seed: u64,
    pub eps_threshold: f64,
    pub s_list: Vec<f64>,
}

fn build_field(name: &str, src: &FieldSource, grid: &Grid, base: &Path) -> Result<Field, ConfigError> {
    match src {
        FieldSource::Value(v) => Ok(Field::constant(*v)),
        FieldSource::Table {
            expr: Some(e),
            file: None,
        } => Field::expr(e).map_err(|source| ConfigError::Expr {
            field: name.to_string(),
            source,
        }),
        FieldSource::Table {
            expr: None,
            file: Some(f),
        } => {
            let (_, u) = read_grid_function(&base.join(f)).map_err(|source| ConfigError::File {
                field: name.to_string(),
                source,
            })?;
            if u.grid.cells() != grid.cells() || u.grid.dim() != grid.dim() {
                return Err(ProblemError::GridMismatch {
                    field: name.to_string(),
                    detail: format!("file has {:?} cells, grid {:?}", u.grid.cells(), grid.cells()),
                }
                .into());
            }
            Ok(Field::Sampled(SampledField {
                cells: grid.cells(),
                slices: vec![u.values],
            }))
        }
        _ => Err(ConfigError::Invalid(format!(
            "field '{name}' needs exactly one of '{name}.expr' or '{name}.file'"
        ))),
    }
}

fn eps_schedule(eps: &EpsSection) -> Result<Vec<f64>, ConfigError> {
    if let Some(s) = &eps.schedule {
        if eps.start.is_some() || eps.factor.is_some() || eps.count.is_some() {
            return Err(ConfigError::Invalid(
                "give either eps.schedule or eps.start/factor/count".into(),
            ));
        }
        return Ok(s.clone());
    }
    match (eps.start, eps.factor, eps.count) {
        (Some(start), Some(factor), Some(count)) if count > 0 => {
            Ok((0..count).map(|k| start * factor.powi(k as i32)).collect())
        }
        _ => Err(ConfigError::Invalid(
            "eps.start, eps.factor and eps.count (≥ 1) are required".into(),
        )),
    }
}

fn newton_config(sec: &NewtonSection, grid: &Grid) -> Result<NewtonConfig, ConfigError> {
    let base = NewtonConfig::for_grid(grid);
    let linear_solver = match sec.linear_solver.as_deref() {
        None | Some("auto") => base.linear_solver,
        Some("cg") => LinearSolver::ConjugateGradient,
        Some("banded") => LinearSolver::Banded,
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "newton.linear_solver = '{other}' (expected cg, banded or auto)"
            )))
        }
    };
    let cfg = NewtonConfig {
        abs_tol: sec.abs_tol.unwrap_or(base.abs_tol),
        rel_tol: sec.rel_tol.unwrap_or(base.rel_tol),
        max_iter: sec.max_iter.unwrap_or(base.max_iter),
        damping: sec.damping.unwrap_or(base.damping),
        max_backtracks: sec.max_backtracks.unwrap_or(base.max_backtracks),
        linear_solver,
        cg_tol: sec.cg_tol.unwrap_or(base.cg_tol),
        cg_max_iter: sec.cg_max_iter.unwrap_or(base.cg_max_iter),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Parse config text; `base_dir` resolves `*.file` entries.
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        RunConfig::from_file(file, base_dir)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    pub fn from_file(file: ConfigFile, base_dir: &Path) -> Result<RunConfig, ConfigError> {
        let ny = match (file.dim, file.ny) {
            (1, None) | (1, Some(1)) => 1,
            (1, Some(_)) => return Err(ConfigError::Invalid("ny must be omitted in 1D".into())),
            (_, Some(ny)) => ny,
            (_, None) => file.nx,
        };
        let grid = Grid::new(
            file.dim,
            [file.nx, ny],
            [file.lx.unwrap_or(1.0), if file.dim == 1 { 1.0 } else { file.ly.unwrap_or(1.0) }],
            file.nt,
            file.t_final,
        )?;
        let base = base_dir.to_path_buf();
        let field = |name: &str, src: &FieldSource| build_field(name, src, &grid, &base);
        let spec = ProblemSpec {
            grid,
            p: field("p", &file.p)?,
            q: field("q", &file.q)?,
            a: field("a", &file.a)?,
            b: field("b", &file.b)?,
            f: field("f", &file.f)?,
            u0: field("u0", &file.u0)?,
            alpha: file.alpha,
            sigma: file.sigma,
            r: file.r,
            d: file.d,
            eps_schedule: eps_schedule(&file.eps)?,
        };
        let newton = newton_config(&file.newton, &grid)?;
        let eps_threshold = file.eps.threshold.unwrap_or(DEFAULT_CONTINUATION_THRESHOLD);
        if !(eps_threshold > 0.0) {
            return Err(ConfigError::Invalid("eps.threshold must be positive".into()));
        }
        let s_list = file.s_list.clone().unwrap_or_else(|| default_s_list(file.dim));
        Ok(RunConfig {
            seed: file.seed,
            file,
            base_dir: base,
            spec,
            newton,
            eps_threshold,
            s_list,
        })
    }

    /// Same experiment on an `n`-cell (per side) mesh with the same number of steps.
    pub fn with_mesh(&self, n: usize) -> Result<RunConfig, ConfigError> {
        let mut file = self.file.clone();
        file.nx = n;
        if file.dim == 2 {
            file.ny = Some(n);
        }
        RunConfig::from_file(file, &self.base_dir)
    }

    /// Final (smallest) ε of the schedule.
    pub fn final_eps(&self) -> f64 {
        *self.spec.eps_schedule.last().expect("schedule is non-empty")
    }
}
