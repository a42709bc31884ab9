//! The `dphase` command-line front end.
//!
//! Exit codes: 0 success, 1 assumption violation or inadmissible input, 2 parse or
//! I/O error, 3 Newton or linear-solver failure, 4 stalled ε-continuation,
//! 5 incomplete checkpoint set.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::grid::Grid;
use crate::harness::{
    mms_convergence, mollification_stability, regularity_report, HarnessError, MmsCase, RegularityReport,
};
use crate::io::{num, opt, read_checkpoints, read_text, write_checkpoints, write_json, write_text, CsvTable, IoError};
use crate::problem::{validate, ProblemError, ValidationReport};
use crate::solver::{epsilon_continuation, solve_evolution, ContinuationTrace, NewtonConfig, SolverError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSUMPTION: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_STALLED: i32 = 4;
pub const EXIT_INCOMPLETE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "dphase", version, about = "Regularized double-phase parabolic solver and verification harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override the config's RNG seed (recorded in the manifest).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions of a config.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve at one ε and write checkpoints, diagnostics and the regularity report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cells per side, replacing nx (and ny).
        #[arg(long)]
        mesh: Option<usize>,
        /// Defaults to the last entry of the ε schedule.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Run the ε-continuation along the configured schedule.
    SweepEps {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mesh: Option<usize>,
    },
    /// Manufactured-solution convergence study.
    Mms {
        #[arg(long, value_enum, default_value_t = MmsKind::Heat)]
        case: MmsKind,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated mesh chain, e.g. 32,64,128.
        #[arg(long, value_delimiter = ',')]
        mesh: Option<Vec<usize>>,
    },
    /// Compare solutions with mollified and raw data.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        widths: Vec<f64>,
        #[arg(long)]
        mesh: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Recompute the regularity report from a `solve` output directory.
    Report {
        run_dir: PathBuf,
        /// Use this config instead of the run's copy.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<run_dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MmsKind {
    Heat,
    DoublePhase,
    Zero,
}

/// Written next to every `solve` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub command: String,
    pub seed: u64,
    pub eps: f64,
    pub mesh: Option<usize>,
    pub cells: [usize; 2],
    pub nt: usize,
    pub t_final: f64,
    pub r: f64,
    pub s_list: Vec<f64>,
    pub newton: NewtonConfig,
    pub files: Vec<String>,
}

/// A failure mapped to an exit code and a JSON line on stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub detail: serde_json::Value,
}

impl Failure {
    fn new(code: i32, kind: &'static str, message: impl ToString) -> Failure {
        Failure {
            code,
            kind,
            message: message.to_string(),
            detail: serde_json::Value::Null,
        }
    }

    fn to_json(&self) -> String {
        json!({"error": self.kind, "exit_code": self.code, "message": self.message, "detail": self.detail}).to_string()
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Failure {
        match e {
            IoError::Incomplete { .. } => Failure::new(EXIT_INCOMPLETE, "IncompleteCheckpoints", e),
            _ => Failure::new(EXIT_PARSE, "Io", e),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::new(EXIT_PARSE, "ConfigParse", e)
    }
}

impl From<ProblemError> for Failure {
    fn from(e: ProblemError) -> Failure {
        Failure::new(EXIT_ASSUMPTION, "Problem", e)
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Failure {
        match &e {
            SolverError::NewtonDiverged {
                step,
                iterations,
                residual,
                ..
            } => {
                let detail = json!({"step": step, "iterations": iterations, "residual": residual});
                Failure {
                    detail,
                    ..Failure::new(EXIT_SOLVER, "NewtonDiverged", &e)
                }
            }
            SolverError::LinearSolveFailed { step, .. } | SolverError::DegenerateJacobian { step } => Failure {
                detail: json!({"step": step}),
                ..Failure::new(EXIT_SOLVER, "SolverFailed", &e)
            },
            SolverError::ContinuationStalled { level, eps, .. } => Failure {
                detail: json!({"level": level, "eps": eps}),
                ..Failure::new(EXIT_STALLED, "ContinuationStalled", &e)
            },
            SolverError::InvalidConfig(_) | SolverError::InvalidEps(_) => Failure::new(EXIT_PARSE, "ConfigParse", &e),
            _ => Failure::new(EXIT_ASSUMPTION, "Problem", &e),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Failure {
        match e {
            HarnessError::Solver(s) => s.into(),
            HarnessError::Problem(p) => p.into(),
            HarnessError::InadmissibleR { r, interval } => Failure {
                detail: json!({"r": r, "lower": interval.lower, "upper": interval.upper}),
                ..Failure::new(EXIT_ASSUMPTION, "InadmissibleR", &e)
            },
            _ => Failure::new(EXIT_ASSUMPTION, "Harness", e),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Validate { config, out } => cmd_validate(config, out.as_deref()),
        Command::Solve { config, out, mesh, eps } => cmd_solve(config, out, *mesh, *eps, cli.seed),
        Command::SweepEps { config, out, mesh } => cmd_sweep_eps(config, out, *mesh),
        Command::Mms { case, out, mesh } => cmd_mms(*case, out, mesh.as_deref()),
        Command::Stability {
            config,
            out,
            widths,
            mesh,
            eps,
        } => cmd_stability(config, out, widths, *mesh, *eps),
        Command::Report {
            run_dir,
            config,
            out,
            r,
            s,
        } => cmd_report(run_dir, config.as_deref(), out.as_deref(), *r, s.as_deref()),
    }
}

fn load(path: &Path, mesh: Option<usize>) -> Result<(RunConfig, String), Failure> {
    let text = read_text(path)?;
    let cfg = RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
    let cfg = match mesh {
        Some(n) => cfg.with_mesh(n)?,
        None => cfg,
    };
    Ok((cfg, text))
}

fn validated(cfg: &RunConfig) -> Result<ValidationReport, Failure> {
    let report = validate(&cfg.spec)?;
    if !report.accepted {
        let names: Vec<&str> = report.violations().map(|c| c.assumption.as_str()).collect();
        return Err(Failure {
            detail: serde_json::to_value(&report).unwrap_or_default(),
            ..Failure::new(
                EXIT_ASSUMPTION,
                "AssumptionViolation",
                format!("violated: {}", names.join(", ")),
            )
        });
    }
    Ok(report)
}

fn cmd_validate(config: &Path, out: Option<&Path>) -> CmdResult {
    let (cfg, _) = load(config, None)?;
    let report = validate(&cfg.spec)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = out {
        write_json(&dir.join("validation.json"), &report)?;
    }
    if report.accepted {
        Ok(())
    } else {
        let names: Vec<&str> = report.violations().map(|c| c.assumption.as_str()).collect();
        Err(Failure::new(
            EXIT_ASSUMPTION,
            "AssumptionViolation",
            format!("violated: {}", names.join(", ")),
        ))
    }
}

fn report_table(rep: &RegularityReport) -> CsvTable {
    let mut t = CsvTable::new(&["quantity", "value"]);
    for (k, v) in rep.quantities() {
        t.push(vec![k, num(v)]);
    }
    t
}

fn mesh_label(grid: &Grid) -> String {
    if grid.dim() == 1 {
        grid.nx().to_string()
    } else {
        format!("{}x{}", grid.nx(), grid.ny())
    }
}

fn long_table(experiment: &str, mesh: &str, rows: &[(String, f64)]) -> CsvTable {
    let mut t = CsvTable::new(&["experiment", "mesh", "quantity", "value"]);
    for (k, v) in rows {
        t.push(vec![experiment.to_string(), mesh.to_string(), k.clone(), num(*v)]);
    }
    t
}

fn write_report(dir: &Path, rep: &RegularityReport, grid: &Grid) -> CmdResult {
    write_json(&dir.join("report.json"), rep)?;
    report_table(rep).write(&dir.join("report.csv"))?;
    long_table("solve", &mesh_label(grid), &rep.quantities()).write(&dir.join("long.csv"))?;
    Ok(())
}

fn cmd_solve(config: &Path, out: &Path, mesh: Option<usize>, eps: Option<f64>, seed: Option<u64>) -> CmdResult {
    let (cfg, text) = load(config, mesh)?;
    let validation = validated(&cfg)?;
    crate::harness::check_r(&cfg.spec, cfg.spec.r)?;
    let eps = eps.unwrap_or_else(|| cfg.final_eps());
    let evo = solve_evolution(&cfg.spec, eps, &cfg.newton)?;
    let grid = cfg.spec.grid;
    let report = regularity_report(&evo.trajectory, &cfg.spec, eps, cfg.spec.r, &cfg.s_list)?;

    write_text(&out.join("config.toml"), &text)?;
    write_json(&out.join("validation.json"), &validation)?;
    write_checkpoints(&out.join("checkpoints"), &evo.trajectory)?;
    let mut diag = CsvTable::new(&["step", "time", "eps", "newton_iters", "residual", "energy_residual"]);
    for d in &evo.diagnostics {
        diag.push(vec![
            d.step.to_string(),
            num(d.time),
            num(d.eps),
            d.newton_iters.to_string(),
            num(d.residual),
            num(d.energy_residual),
        ]);
    }
    diag.write(&out.join("diagnostics.csv"))?;
    write_report(out, &report, &grid)?;
    let manifest = Manifest {
        schema: 1,
        command: "solve".into(),
        seed: seed.unwrap_or(cfg.seed),
        eps,
        mesh,
        cells: grid.cells(),
        nt: grid.nt(),
        t_final: grid.t_final(),
        r: cfg.spec.r,
        s_list: cfg.s_list.clone(),
        newton: cfg.newton,
        files: [
            "config.toml",
            "validation.json",
            "checkpoints/",
            "diagnostics.csv",
            "report.json",
            "report.csv",
            "long.csv",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "solved {} steps at eps={}: newton_iters={} energy_residual_max={:e}",
        grid.nt(),
        num(eps),
        evo.newton_iters(),
        evo.energy_residual_max()
    );
    Ok(())
}

fn continuation_table(trace: &ContinuationTrace) -> CsvTable {
    let mut t = CsvTable::new(&[
        "level",
        "eps",
        "newton_iters",
        "energy_residual_max",
        "g_eps",
        "n_modular",
        "s_under_modular",
    ]);
    for (k, evo) in trace.solutions.iter().enumerate() {
        let m = k.checked_sub(1).and_then(|j| trace.metrics.get(j));
        t.push(vec![
            k.to_string(),
            num(evo.eps),
            evo.newton_iters().to_string(),
            num(evo.energy_residual_max()),
            opt(m.map(|m| m.g_eps)),
            opt(m.map(|m| m.n_modular)),
            opt(m.map(|m| m.s_under_modular)),
        ]);
    }
    t
}

fn write_trace(out: &Path, trace: &ContinuationTrace, stalled: bool) -> CmdResult {
    continuation_table(trace).write(&out.join("continuation.csv"))?;
    let summary = json!({
        "schedule": trace.schedule,
        "levels_solved": trace.solutions.len(),
        "monotone": trace.is_monotone(),
        "reduction": trace.reduction(),
        "threshold": trace.threshold,
        "certified": trace.is_certified(),
        "stalled": stalled,
        "newton_iters": trace.newton_iters(),
    });
    write_json(&out.join("continuation.json"), &summary)?;
    Ok(())
}

fn cmd_sweep_eps(config: &Path, out: &Path, mesh: Option<usize>) -> CmdResult {
    let (cfg, _) = load(config, mesh)?;
    validated(&cfg)?;
    match epsilon_continuation(&cfg.spec, &cfg.newton, cfg.eps_threshold) {
        Ok(trace) => {
            write_trace(out, &trace, false)?;
            println!(
                "continuation over {} levels: monotone={} reduction={}",
                trace.solutions.len(),
                trace.is_monotone(),
                opt(trace.reduction())
            );
            Ok(())
        }
        Err(SolverError::ContinuationStalled { level, eps, trace }) => {
            write_trace(out, &trace, true)?;
            Err(SolverError::ContinuationStalled { level, eps, trace }.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// The default refinement chain of a built-in case.
pub fn mms_grids(kind: MmsKind, meshes: Option<&[usize]>) -> Result<Vec<Grid>, Failure> {
    let case = mms_case(kind);
    let default: &[usize] = match kind {
        MmsKind::Heat => &[32, 64, 128],
        _ => &[16, 32, 64],
    };
    meshes
        .unwrap_or(default)
        .iter()
        .map(|&n| {
            let g = match kind {
                // τ ∝ h² keeps the first-order time error at the level of the spatial one
                MmsKind::Heat => {
                    let h = 1.0 / n as f64;
                    let nt = (2.0 * case.t_final / (h * h)).ceil() as usize;
                    Grid::unit_1d(n, nt, case.t_final)
                }
                // u* is affine in t, so backward Euler is exact in time
                _ => Grid::unit_2d(n, 5, case.t_final),
            };
            g.map_err(|e| Failure::new(EXIT_PARSE, "Mesh", e))
        })
        .collect()
}

pub fn mms_case(kind: MmsKind) -> MmsCase {
    match kind {
        MmsKind::Heat => MmsCase::heat(),
        MmsKind::DoublePhase => MmsCase::double_phase(),
        MmsKind::Zero => MmsCase::zero(),
    }
}

fn cmd_mms(kind: MmsKind, out: &Path, meshes: Option<&[usize]>) -> CmdResult {
    let grids = mms_grids(kind, meshes)?;
    let case = mms_case(kind);
    let table = mms_convergence(&case, &grids, &NewtonConfig::for_grid(&grids[0]))?;
    let mut t = CsvTable::new(&["case", "cells", "h", "tau", "l2_error", "grad_error", "order"]);
    let mut long = CsvTable::new(&["experiment", "mesh", "quantity", "value"]);
    for row in &table.rows {
        t.push(vec![
            table.case.clone(),
            row.cells.to_string(),
            num(row.h),
            num(row.tau),
            num(row.l2_error),
            num(row.grad_error),
            opt(row.order),
        ]);
        for (k, v) in [("l2_error", Some(row.l2_error)), ("grad_error", Some(row.grad_error)), ("order", row.order)] {
            if let Some(v) = v {
                long.push(vec![format!("mms_{}", table.case), row.cells.to_string(), k.into(), num(v)]);
            }
        }
    }
    t.write(&out.join("mms.csv"))?;
    long.write(&out.join("long.csv"))?;
    write_json(&out.join("mms.json"), &table)?;
    println!("mms {}: min observed order {}", table.case, opt(table.min_order()));
    Ok(())
}

fn cmd_stability(config: &Path, out: &Path, widths: &[f64], mesh: Option<usize>, eps: Option<f64>) -> CmdResult {
    let (cfg, _) = load(config, mesh)?;
    validated(&cfg)?;
    let eps = eps.unwrap_or_else(|| cfg.final_eps());
    let rows = mollification_stability(&cfg.spec, widths, eps, &cfg.newton)?;
    let mut t = CsvTable::new(&["width", "g_eps", "n_modular", "s_under_modular"]);
    for row in &rows {
        t.push(vec![
            num(row.width),
            num(row.metrics.g_eps),
            num(row.metrics.n_modular),
            num(row.metrics.s_under_modular),
        ]);
    }
    t.write(&out.join("stability.csv"))?;
    write_json(&out.join("stability.json"), &rows)?;
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].metrics.s_under_modular <= w[0].metrics.s_under_modular);
    println!("stability over {} widths: decreasing={decreasing}", rows.len());
    Ok(())
}

fn cmd_report(
    run_dir: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    r: Option<f64>,
    s: Option<&[f64]>,
) -> CmdResult {
    let manifest: Manifest = serde_json::from_str(&read_text(&run_dir.join("manifest.json"))?)
        .map_err(|e| Failure::new(EXIT_PARSE, "Manifest", e))?;
    let config_path = config.map_or_else(|| run_dir.join("config.toml"), Path::to_path_buf);
    let (cfg, _) = load(&config_path, manifest.mesh)?;
    let u = read_checkpoints(&run_dir.join("checkpoints"))?;
    if !u.grid.same_shape(&cfg.spec.grid) {
        return Err(Failure::new(
            EXIT_INCOMPLETE,
            "IncompleteCheckpoints",
            "checkpoint grid does not match the config",
        ));
    }
    let r = r.unwrap_or(cfg.spec.r);
    let s_list = s.map_or_else(|| cfg.s_list.clone(), <[f64]>::to_vec);
    let rep = regularity_report(&u, &cfg.spec, manifest.eps, r, &s_list)?;
    let dir = out.map_or_else(|| run_dir.join("report"), Path::to_path_buf);
    write_report(&dir, &rep, &u.grid)?;
    println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
    Ok(())
}
