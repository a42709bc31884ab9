//! Backward-Euler time stepping of the regularized problem with damped Newton, and the
//! ε-continuation loop.
//!
//! The spatial operator is the gradient of the discrete energy
//! `E(u) = Σ_c |c|/n_q Σ_q Φ_c(ξ_q(u))`, where `ξ_q` runs over the staggered gradient
//! pairs of cell `c` and `Φ_c` is the convex potential of the flux with the cell's
//! exponents and coefficients. The Newton matrix is therefore an exact, symmetric
//! Hessian, and `(R(u), u)` reproduces the discrete energy identity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::{flux_jacobian, flux_value, FluxPoint};
use crate::grid::{Grid, GridError, GridFunction, Quadrants, Trajectory};
use crate::linalg::{conjugate_gradient, solve_tridiagonal, CsrMatrix, LinearError};
use crate::problem::{ProblemError, ProblemSpec};
use crate::varexp::{convergence_metrics, ConvergenceMetrics, VarexpError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid Newton configuration: {0}")]
    InvalidConfig(String),
    #[error("regularization parameter must be finite and ≥ 0, got {0}")]
    InvalidEps(f64),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] VarexpError),
    #[error("Newton diverged at step {step} after {iterations} iterations (residual {residual:e}): {reason}")]
    NewtonDiverged {
        step: usize,
        iterations: usize,
        residual: f64,
        reason: String,
    },
    #[error("linear solve failed at step {step}: {source}")]
    LinearSolveFailed { step: usize, source: LinearError },
    #[error("flux Jacobian undefined at step {step} (ε = 0 with a zero gradient and exponent below 2)")]
    DegenerateJacobian { step: usize },
    #[error("ε-continuation stalled at level {level} (ε = {eps:e}): metrics failed to decrease three times in a row")]
    ContinuationStalled {
        level: usize,
        eps: f64,
        trace: Box<ContinuationTrace>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSolver {
    /// Conjugate gradients with a diagonal preconditioner.
    ConjugateGradient,
    /// Direct tridiagonal elimination; 1D grids only.
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Backtracking factor in `(0, 1)`.
    pub damping: f64,
    pub max_backtracks: usize,
    pub linear_solver: LinearSolver,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            abs_tol: 1e-9,
            rel_tol: 1e-12,
            max_iter: 50,
            damping: 0.5,
            max_backtracks: 30,
            linear_solver: LinearSolver::ConjugateGradient,
            cg_tol: 1e-12,
            cg_max_iter: 20_000,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.cg_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad("damping must lie in (0, 1)");
        }
        if self.max_iter == 0 || self.cg_max_iter == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }

    /// The usual choice for a grid: banded elimination in 1D, CG otherwise.
    pub fn for_grid(grid: &Grid) -> NewtonConfig {
        NewtonConfig {
            linear_solver: if grid.dim() == 1 {
                LinearSolver::Banded
            } else {
                LinearSolver::ConjugateGradient
            },
            ..NewtonConfig::default()
        }
    }
}

/// One implicit step's data: coefficients frozen at the new time level.
#[derive(Debug, Clone)]
pub struct StepOperator {
    grid: Grid,
    tau: f64,
    points: Vec<FluxPoint>,
    f: Vec<f64>,
    u_prev: Vec<f64>,
    quads: Vec<Quadrants>,
}

impl StepOperator {
    pub fn new(spec: &ProblemSpec, level: usize, eps: f64, u_prev: &[f64]) -> StepOperator {
        let grid = spec.grid;
        let data = spec.level(level);
        let points = (0..grid.len())
            .map(|c| FluxPoint::new(data.p[c], data.q[c], data.a[c], data.b[c], eps))
            .collect();
        StepOperator {
            grid,
            tau: grid.tau(),
            points,
            f: data.f,
            u_prev: u_prev.to_vec(),
            quads: (0..grid.len()).map(|c| grid.quadrants(c)).collect(),
        }
    }

    /// `R(u) = (u − u_prev)/τ − div_h(F_ε ∇_h u) − f`.
    pub fn residual(&self, u: &[f64], out: &mut [f64]) {
        for k in 0..u.len() {
            out[k] = (u[k] - self.u_prev[k]) / self.tau - self.f[k];
        }
        for (fp, quads) in self.points.iter().zip(&self.quads) {
            let inv_n = 1.0 / quads.count as f64;
            for pair in quads.iter() {
                let xi = [pair[0].apply(u), pair[1].apply(u)];
                let (flux, _) = flux_value(fp, &xi);
                for (axis, diff) in pair.iter().enumerate() {
                    for (cell, coef) in diff.terms() {
                        out[cell] += inv_n * flux[axis] * coef;
                    }
                }
            }
        }
    }

    /// `∂R/∂u`, symmetric by construction.
    pub fn jacobian(&self, u: &[f64], mat: &mut CsrMatrix) -> Result<(), crate::flux::FluxError> {
        mat.clear();
        for k in 0..u.len() {
            mat.add(k, k, 1.0 / self.tau);
        }
        for (fp, quads) in self.points.iter().zip(&self.quads) {
            let inv_n = 1.0 / quads.count as f64;
            for pair in quads.iter() {
                let xi = [pair[0].apply(u), pair[1].apply(u)];
                let jac = flux_jacobian(fp, &xi)?;
                for (ai, di) in pair.iter().enumerate() {
                    for (ci, ki) in di.terms() {
                        for (aj, dj) in pair.iter().enumerate() {
                            for (cj, kj) in dj.terms() {
                                mat.add(ci, cj, inv_n * ki * jac[ai][aj] * kj);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `Σ_c |c|/n_q Σ_q F_ε(ξ_q)|ξ_q|²`.
    pub fn dissipation(&self, u: &[f64]) -> f64 {
        let vol = self.grid.cell_volume();
        self.points
            .iter()
            .zip(&self.quads)
            .map(|(fp, quads)| {
                let (xs, n) = quads.gradients(u);
                let s: f64 = xs[..n]
                    .iter()
                    .map(|xi| {
                        let (flux, _) = flux_value(fp, xi);
                        flux[0] * xi[0] + flux[1] * xi[1]
                    })
                    .sum();
                vol * s / n as f64
            })
            .sum()
    }

    /// Scaled defect of `½d_τ‖u‖² + ½τ‖d_τu‖² + Σ F_ε|∇u|² − (f, u)`.
    pub fn energy_residual(&self, u: &[f64]) -> f64 {
        let vol = self.grid.cell_volume();
        let mut time_part = 0.0;
        let mut source = 0.0;
        let mut norm_sq = 0.0;
        for k in 0..u.len() {
            let v = self.u_prev[k];
            let d = u[k] - v;
            time_part += 0.5 * d * (u[k] + v) + 0.5 * d * d;
            source += self.f[k] * u[k];
            norm_sq += u[k] * u[k];
        }
        let defect = vol * time_part / self.tau + self.dissipation(u) - vol * source;
        defect.abs() / (vol * norm_sq).sqrt().max(1.0)
    }

    fn l2(&self, r: &[f64]) -> f64 {
        (self.grid.cell_volume() * r.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }
}

/// Discrete residual of one implicit step, as a grid function.
pub fn residual(
    u_next: &GridFunction,
    u_prev: &GridFunction,
    spec: &ProblemSpec,
    eps: f64,
    level: usize,
) -> Result<GridFunction, SolverError> {
    u_next.grid.check_same_shape(&spec.grid)?;
    u_prev.grid.check_same_shape(&spec.grid)?;
    let op = StepOperator::new(spec, level, eps, &u_prev.values);
    let mut out = vec![0.0; u_next.values.len()];
    op.residual(&u_next.values, &mut out);
    Ok(GridFunction::from_values(spec.grid, spec.grid.time(level), out)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeStepState {
    pub u_now: GridFunction,
    pub u_prev: GridFunction,
    /// Index of the level being computed.
    pub step: usize,
    pub eps: f64,
    pub newton_iters: usize,
    /// `‖R‖_{L²}` after each accepted iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

impl TimeStepState {
    /// Step `step` started from the guess `guess`.
    pub fn new(u_prev: GridFunction, guess: GridFunction, step: usize, eps: f64) -> TimeStepState {
        TimeStepState {
            u_now: guess,
            u_prev,
            step,
            eps,
            newton_iters: 0,
            residual_history: Vec::new(),
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn linear_solve(
    mat: &CsrMatrix,
    rhs: &[f64],
    x: &mut [f64],
    config: &NewtonConfig,
    target: f64,
) -> Result<(), LinearError> {
    match config.linear_solver {
        LinearSolver::Banded => solve_tridiagonal(mat, rhs, x),
        LinearSolver::ConjugateGradient => {
            let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let floor = (config.cg_tol * bnorm).min(target);
            conjugate_gradient(mat, rhs, x, 0.0, floor, config.cg_max_iter).map(|_| ())
        }
    }
}

/// Damped Newton for one implicit step, started from `state.u_now`.
pub fn newton_step(
    state: TimeStepState,
    config: &NewtonConfig,
    spec: &ProblemSpec,
) -> Result<TimeStepState, SolverError> {
    let op = StepOperator::new(spec, state.step, state.eps, &state.u_prev.values);
    let mut mat = CsrMatrix::stencil_pattern(&spec.grid);
    newton_with(state, config, &op, &mut mat)
}

fn newton_with(
    mut state: TimeStepState,
    config: &NewtonConfig,
    op: &StepOperator,
    mat: &mut CsrMatrix,
) -> Result<TimeStepState, SolverError> {
    let step = state.step;
    let n = op.grid.len();
    let mut u = state.u_now.values.clone();
    let mut r = vec![0.0; n];
    op.residual(&u, &mut r);
    let mut rnorm = op.l2(&r);
    let diverged = |iterations: usize, residual: f64, reason: &str| SolverError::NewtonDiverged {
        step,
        iterations,
        residual,
        reason: reason.to_string(),
    };
    if !rnorm.is_finite() {
        return Err(diverged(0, rnorm, "non-finite initial residual"));
    }
    let tol = config.abs_tol + config.rel_tol * rnorm;
    // Euclidean target for the linear solve, well inside the Newton tolerance.
    let lin_target = 0.01 * config.abs_tol / op.grid.cell_volume().sqrt();
    state.residual_history = vec![rnorm];
    let mut delta = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let mut iters = 0;
    while rnorm > tol {
        if iters == config.max_iter {
            return Err(diverged(iters, rnorm, "iteration limit reached"));
        }
        op.jacobian(&u, mat)
            .map_err(|_| SolverError::DegenerateJacobian { step })?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        linear_solve(mat, &rhs, &mut delta, config, lin_target)
            .map_err(|source| SolverError::LinearSolveFailed { step, source })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=config.max_backtracks {
            for k in 0..n {
                trial[k] = u[k] + lambda * delta[k];
            }
            op.residual(&trial, &mut r_trial);
            let tnorm = op.l2(&r_trial);
            if tnorm.is_finite() && tnorm < rnorm {
                std::mem::swap(&mut u, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                rnorm = tnorm;
                accepted = true;
                break;
            }
            lambda *= config.damping;
        }
        iters += 1;
        if !accepted {
            return Err(diverged(iters, rnorm, "backtracking exhausted"));
        }
        state.residual_history.push(rnorm);
    }
    state.newton_iters = iters;
    state.u_now.values = u;
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub eps: f64,
    pub newton_iters: usize,
    pub residual: f64,
    pub energy_residual: f64,
    /// The step's Newton stopping threshold.
    pub tolerance: f64,
}

/// A discrete solution over `Q_T` with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub eps: f64,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Evolution {
    pub fn newton_iters(&self) -> usize {
        self.diagnostics.iter().map(|d| d.newton_iters).sum()
    }

    pub fn energy_residual_max(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| d.energy_residual)
            .fold(0.0, f64::max)
    }

    pub fn time_derivative_norm(&self) -> f64 {
        time_derivative_norm(&self.trajectory)
    }
}

/// `‖(uⁿ − uⁿ⁻¹)/τ‖_{L²(Q_T)}`.
pub fn time_derivative_norm(u: &Trajectory) -> f64 {
    let tau = u.grid.tau();
    let vol = u.grid.cell_volume();
    let s: f64 = u
        .slices
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(a, b)| ((a - b) / tau).powi(2))
                .sum::<f64>()
        })
        .sum();
    (tau * vol * s).sqrt()
}

/// March `n = 1..=nt` from the sampled initial datum.
pub fn solve_evolution(spec: &ProblemSpec, eps: f64, config: &NewtonConfig) -> Result<Evolution, SolverError> {
    solve_evolution_from(spec, eps, config, None)
}

/// As [`solve_evolution`], taking each step's Newton guess from `guess` when given.
pub fn solve_evolution_from(
    spec: &ProblemSpec,
    eps: f64,
    config: &NewtonConfig,
    guess: Option<&Trajectory>,
) -> Result<Evolution, SolverError> {
    config.validate()?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(SolverError::InvalidEps(eps));
    }
    spec.check_fields()?;
    let grid = spec.grid;
    if config.linear_solver == LinearSolver::Banded && grid.dim() != 1 {
        return Err(SolverError::InvalidConfig(
            "banded elimination needs a 1D grid".into(),
        ));
    }
    if let Some(g) = guess {
        grid.check_same_shape(&g.grid)?;
    }
    let mut slices = Vec::with_capacity(grid.nt() + 1);
    slices.push(spec.initial_condition().values);
    let mut diagnostics = Vec::with_capacity(grid.nt());
    let mut mat = CsrMatrix::stencil_pattern(&grid);
    for n in 1..=grid.nt() {
        let prev = slices[n - 1].clone();
        let op = StepOperator::new(spec, n, eps, &prev);
        let start = guess.map_or_else(|| prev.clone(), |g| g.slices[n].clone());
        let time = grid.time(n);
        let state = TimeStepState::new(
            GridFunction::from_values(grid, grid.time(n - 1), prev)?,
            GridFunction::from_values(grid, time, start)?,
            n,
            eps,
        );
        let state = newton_with(state, config, &op, &mut mat)?;
        let tol = config.abs_tol + config.rel_tol * state.residual_history[0];
        diagnostics.push(StepDiagnostics {
            step: n,
            time,
            eps,
            newton_iters: state.newton_iters,
            residual: state.final_residual(),
            energy_residual: op.energy_residual(&state.u_now.values),
            tolerance: tol,
        });
        slices.push(state.u_now.values);
    }
    Ok(Evolution {
        eps,
        trajectory: Trajectory::new(grid, slices)?,
        diagnostics,
    })
}

/// Per-ε solutions and the convergence metrics between successive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationTrace {
    pub schedule: Vec<f64>,
    pub solutions: Vec<Evolution>,
    /// `metrics[k]` compares `solutions[k]` with `solutions[k + 1]`.
    pub metrics: Vec<ConvergenceMetrics>,
    /// Relative threshold the final s̲-modular must reach.
    pub threshold: f64,
}

impl ContinuationTrace {
    pub fn is_monotone(&self) -> bool {
        self.metrics
            .windows(2)
            .all(|w| w[1].s_under_modular < w[0].s_under_modular)
    }

    /// Final s̲-modular relative to the first one (0 when both vanish).
    pub fn reduction(&self) -> Option<f64> {
        let first = self.metrics.first()?.s_under_modular;
        let last = self.metrics.last()?.s_under_modular;
        Some(if first == 0.0 { 0.0 } else { last / first })
    }

    pub fn is_certified(&self) -> bool {
        self.reduction().is_some_and(|r| r <= self.threshold)
    }

    pub fn newton_iters(&self) -> usize {
        self.solutions.iter().map(Evolution::newton_iters).sum()
    }
}

pub const DEFAULT_CONTINUATION_THRESHOLD: f64 = 1e-3;

/// Solve along `spec.eps_schedule`, warm-starting every level from the previous one.
///
/// A level counts as a failure when its s̲-modular does not decrease and still exceeds
/// `threshold` times the first one; three consecutive failures stop the run.
pub fn epsilon_continuation(
    spec: &ProblemSpec,
    config: &NewtonConfig,
    threshold: f64,
) -> Result<ContinuationTrace, SolverError> {
    let schedule = spec.eps_schedule.clone();
    if schedule.is_empty() {
        return Err(SolverError::InvalidConfig("empty ε schedule".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(SolverError::InvalidConfig(
            "ε schedule must be strictly decreasing".into(),
        ));
    }
    let mut trace = ContinuationTrace {
        schedule: schedule.clone(),
        solutions: Vec::with_capacity(schedule.len()),
        metrics: Vec::new(),
        threshold,
    };
    let mut failures = 0;
    for (level, &eps) in schedule.iter().enumerate() {
        let guess = trace.solutions.last().map(|e| &e.trajectory);
        let evo = solve_evolution_from(spec, eps, config, guess)?;
        if let Some(prev) = trace.solutions.last() {
            let m = convergence_metrics(&prev.trajectory, &evo.trajectory, spec, eps)?;
            if let Some(last) = trace.metrics.last() {
                let first = trace.metrics[0].s_under_modular;
                let failed = m.s_under_modular >= last.s_under_modular && m.s_under_modular > threshold * first;
                failures = if failed { failures + 1 } else { 0 };
            }
            trace.metrics.push(m);
        }
        trace.solutions.push(evo);
        if failures >= 3 {
            return Err(SolverError::ContinuationStalled {
                level,
                eps,
                trace: Box::new(trace),
            });
        }
    }
    Ok(trace)
}
