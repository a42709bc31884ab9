//! Regularity functionals, manufactured-solution verification, and data-stability
//! experiments built on top of the solver.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::flux::{flux_value, FluxPoint};
use crate::grid::{face_inner, gradient, hessian, is_boundary_cell, Grid, GridError, GridFunction, Trajectory};
use crate::problem::{admissible_r_interval, mollify_coefficients, Field, ProblemError, ProblemSpec, RInterval};
use crate::solver::{solve_evolution, time_derivative_norm, NewtonConfig, SolverError, StepOperator};
use crate::varexp::{convergence_metrics, gradient_integral, ConvergenceMetrics, VarexpError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("r = {r} outside the admissible interval [{}, {}]", interval.lower, interval.upper)]
    InadmissibleR { r: f64, interval: RInterval },
    #[error("s = {s} outside (0, {limit})")]
    InvalidS { s: f64, limit: f64 },
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Varexp(#[from] VarexpError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `4/(N+2)`, the upper end of the improved-integrability range for `s`.
pub fn s_limit(dim: usize) -> f64 {
    4.0 / (dim as f64 + 2.0)
}

/// `{0.2, 0.5, 0.8}·4/(N+2)`.
pub fn default_s_list(dim: usize) -> Vec<f64> {
    [0.2, 0.5, 0.8].iter().map(|f| f * s_limit(dim)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImprovedModular {
    pub s: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub r: f64,
    pub eps: f64,
    pub cells: [usize; 2],
    pub nt: usize,
    /// `max_n ∫|∇uⁿ|^r`, including the initial slice.
    pub sup_r_norm: f64,
    /// `∫|∇u⁰|^r`.
    pub initial_r_norm: f64,
    /// `∫_{Q_T} |∇u|^{s̲+r+s}` for each configured `s`.
    pub improved_modular: Vec<ImprovedModular>,
    #[serde(rename = "ut_L2")]
    pub ut_l2: f64,
    #[serde(rename = "G_L2H1")]
    pub g_l2h1: f64,
    pub energy_residual_max: f64,
    pub interpolation_ratio: f64,
    /// Cells excluded next to `∂Ω` in the second-derivative integral.
    pub hessian_margin: usize,
}

impl RegularityReport {
    /// Scalar entries as `(name, value)` pairs, in a fixed order.
    pub fn quantities(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("sup_r_norm".to_string(), self.sup_r_norm),
            ("initial_r_norm".to_string(), self.initial_r_norm),
        ];
        for m in &self.improved_modular {
            out.push((format!("improved_modular[s={}]", m.s), m.value));
        }
        out.extend([
            ("ut_L2".to_string(), self.ut_l2),
            ("G_L2H1".to_string(), self.g_l2h1),
            ("energy_residual_max".to_string(), self.energy_residual_max),
            ("interpolation_ratio".to_string(), self.interpolation_ratio),
        ]);
        out
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.quantities().iter().all(|(_, v)| v.is_finite() && *v >= 0.0)
    }
}

fn norm(x: [f64; 2]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// The admissible interval of `r` for `spec`.
pub fn r_interval(spec: &ProblemSpec) -> Result<RInterval, HarnessError> {
    let ex = spec.exponent_extrema()?;
    Ok(admissible_r_interval(
        spec.dim(),
        spec.sigma,
        ex.p_minus,
        ex.q_minus,
        ex.p_plus,
        ex.q_plus,
    )?)
}

/// Fail with `InadmissibleR` unless `r` lies in the admissible interval.
pub fn check_r(spec: &ProblemSpec, r: f64) -> Result<RInterval, HarnessError> {
    let interval = r_interval(spec)?;
    if interval.is_empty() || !interval.contains(r) {
        return Err(HarnessError::InadmissibleR { r, interval });
    }
    Ok(interval)
}

fn check_s(dim: usize, s: f64) -> Result<(), HarnessError> {
    let limit = s_limit(dim);
    if !(s > 0.0 && s < limit) {
        return Err(HarnessError::InvalidS { s, limit });
    }
    Ok(())
}

/// Cell field `G = mean_q [a|ξ_q|^{(p+r−2)/2} + b|ξ_q|^{(q+r−2)/2}]`.
pub fn g_field(grid: &Grid, values: &[f64], p: &[f64], q: &[f64], a: &[f64], b: &[f64], r: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|c| {
            let (xs, n) = grid.quadrants(c).gradients(values);
            xs[..n]
                .iter()
                .map(|xi| {
                    let m = norm(*xi);
                    a[c] * m.powf(0.5 * (p[c] + r - 2.0)) + b[c] * m.powf(0.5 * (q[c] + r - 2.0))
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// `‖G‖² + ‖∇_h G‖²` with the gradient taken across interior faces only.
fn h1_sq(grid: &Grid, g: &[f64]) -> f64 {
    let vol = grid.cell_volume();
    let h = grid.spacing();
    let mut s: f64 = g.iter().map(|v| v * v).sum();
    for c in 0..grid.len() {
        let (i, j) = grid.coords(c);
        if i + 1 < grid.nx() {
            s += ((g[grid.index(i + 1, j)] - g[c]) / h[0]).powi(2);
        }
        if grid.dim() == 2 && j + 1 < grid.ny() {
            s += ((g[grid.index(i, j + 1)] - g[c]) / h[1]).powi(2);
        }
    }
    vol * s
}

/// Regularity functionals of a discrete solution over `Q_T`.
pub fn regularity_report(
    u: &Trajectory,
    spec: &ProblemSpec,
    eps: f64,
    r: f64,
    s_list: &[f64],
) -> Result<RegularityReport, HarnessError> {
    u.grid.check_same_shape(&spec.grid)?;
    check_r(spec, r)?;
    for &s in s_list {
        check_s(spec.dim(), s)?;
    }
    let grid = &u.grid;
    let tau = grid.tau();
    let r_norm = |values: &[f64]| gradient_integral(grid, values, |_, xi| norm(xi).powf(r));
    let initial_r_norm = r_norm(&u.slices[0]);
    let mut sup_r_norm = initial_r_norm;
    let mut improved = vec![0.0; s_list.len()];
    let mut g_sq = 0.0;
    let mut energy_residual_max: f64 = 0.0;
    for n in 1..=grid.nt() {
        let values = &u.slices[n];
        sup_r_norm = sup_r_norm.max(r_norm(values));
        let data = spec.level(n);
        for (acc, &s) in improved.iter_mut().zip(s_list) {
            *acc += tau
                * gradient_integral(grid, values, |c, xi| {
                    norm(xi).powf(data.p[c].min(data.q[c]) + r + s)
                });
        }
        let g = g_field(grid, values, &data.p, &data.q, &data.a, &data.b, r);
        g_sq += tau * h1_sq(grid, &g);
        let op = StepOperator::new(spec, n, eps, &u.slices[n - 1]);
        energy_residual_max = energy_residual_max.max(op.energy_residual(values));
    }
    let interpolation_ratio = match s_list.len() {
        0 => 0.0,
        k => {
            let mut sorted = s_list.to_vec();
            sorted.sort_by(f64::total_cmp);
            interpolation_diagnostic(&u.last(), spec, eps, r, sorted[k / 2])?
        }
    };
    Ok(RegularityReport {
        r,
        eps,
        cells: grid.cells(),
        nt: grid.nt(),
        sup_r_norm,
        initial_r_norm,
        improved_modular: s_list
            .iter()
            .zip(improved)
            .map(|(&s, value)| ImprovedModular { s, value })
            .collect(),
        ut_l2: time_derivative_norm(u),
        g_l2h1: g_sq.sqrt(),
        energy_residual_max,
        interpolation_ratio,
        hessian_margin: 1,
    })
}

/// `α∫|∇u|^{s̲+s+r} / (∫F_ε^{(r,r)}|D²u|² + 1)` at one time slice, with the
/// second-derivative integral restricted to cells away from `∂Ω`.
pub fn interpolation_diagnostic(
    u: &GridFunction,
    spec: &ProblemSpec,
    eps: f64,
    r: f64,
    s: f64,
) -> Result<f64, HarnessError> {
    u.grid.check_same_shape(&spec.grid)?;
    check_s(spec.dim(), s)?;
    let grid = &u.grid;
    let level = ((u.time / grid.tau()).round() as usize).min(grid.nt());
    let data = spec.level(level);
    let num = spec.alpha
        * gradient_integral(grid, &u.values, |c, xi| {
            norm(xi).powf(data.p[c].min(data.q[c]) + s + r)
        });
    let hess = hessian(u);
    let vol = grid.cell_volume();
    let mut den = 0.0;
    for c in 0..grid.len() {
        if is_boundary_cell(grid, c) {
            continue;
        }
        let fp = FluxPoint::new(data.p[c], data.q[c], data.a[c], data.b[c], eps);
        let (xs, n) = grid.quadrants(c).gradients(&u.values);
        let weight = xs[..n]
            .iter()
            .map(|xi| fp.shifted_diffusivity(fp.w(xi[0] * xi[0] + xi[1] * xi[1]), r, r))
            .sum::<f64>()
            / n as f64;
        den += vol * weight * hess[c].frobenius_sq();
    }
    Ok(num / (den + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreservationVerdict {
    pub pass: bool,
    /// `C = max(0, sup − ∫|∇u0|^r)` on the coarsest mesh.
    pub constant: f64,
    /// `sup_r_norm / (C + ∫|∇u0|^r)` per mesh.
    pub ratios: Vec<f64>,
    /// Smallest `1.05·bound − sup` over the finer meshes.
    pub margin: f64,
    /// The improved modular is finite and its successive mesh differences shrink.
    pub improved_cauchy: bool,
}

/// Boundedness of `sup_t ∫|∇u|^r` under refinement with a coarse-fitted constant.
pub fn preservation_check(chain: &[RegularityReport]) -> Result<PreservationVerdict, HarnessError> {
    if chain.len() < 3 {
        return Err(HarnessError::Precondition(format!(
            "preservation needs at least 3 meshes, got {}",
            chain.len()
        )));
    }
    let constant = (chain[0].sup_r_norm - chain[0].initial_r_norm).max(0.0);
    let mut margin = f64::INFINITY;
    let mut ratios = Vec::with_capacity(chain.len());
    for (k, rep) in chain.iter().enumerate() {
        let bound = constant + rep.initial_r_norm;
        ratios.push(if bound > 0.0 { rep.sup_r_norm / bound } else { 0.0 });
        if k > 0 {
            margin = margin.min(1.05 * bound - rep.sup_r_norm);
        }
    }
    let improved_cauchy = (0..chain[0].improved_modular.len()).all(|k| {
        let v: Vec<f64> = chain.iter().map(|rep| rep.improved_modular[k].value).collect();
        v.iter().all(|x| x.is_finite())
            && v.windows(3).all(|w| (w[2] - w[1]).abs() <= (w[1] - w[0]).abs())
    });
    Ok(PreservationVerdict {
        pass: margin >= 0.0,
        constant,
        ratios,
        margin,
        improved_cauchy,
    })
}

/// How the manufactured source is obtained.
#[derive(Debug, Clone)]
pub enum Forcing {
    ClosedForm(Expr),
    /// Apply the continuous operator to `u*` with fourth-order differences of step `delta`.
    FineGrid { delta: f64 },
}

/// A manufactured solution with its data.
#[derive(Debug, Clone)]
pub struct MmsCase {
    pub name: String,
    pub exact: Expr,
    pub forcing: Forcing,
    pub p: Expr,
    pub q: Expr,
    pub a: Expr,
    pub b: Expr,
    pub eps: f64,
    pub t_final: f64,
}

impl MmsCase {
    /// `u* = sin(πx)e^{−π²t}` for `p = q = 2`, `a = b = ½`, `ε = 0` on the unit interval.
    pub fn heat() -> MmsCase {
        MmsCase {
            name: "heat".into(),
            exact: Expr::parse("sin(pi*x)*exp(-pi^2*t)").unwrap(),
            forcing: Forcing::ClosedForm(Expr::constant(0.0)),
            p: Expr::constant(2.0),
            q: Expr::constant(2.0),
            a: Expr::constant(0.5),
            b: Expr::constant(0.5),
            eps: 0.0,
            t_final: 0.1,
        }
    }

    /// `u* = sin(πx)sin(πy)(1+t)` with `p = 3`, `q = 2.9`, `a = b = ½`, `ε = 10⁻²`.
    pub fn double_phase() -> MmsCase {
        MmsCase {
            name: "double_phase".into(),
            exact: Expr::parse("sin(pi*x)*sin(pi*y)*(1+t)").unwrap(),
            forcing: Forcing::FineGrid { delta: 1e-3 },
            p: Expr::constant(3.0),
            q: Expr::constant(2.9),
            a: Expr::constant(0.5),
            b: Expr::constant(0.5),
            eps: 1e-2,
            t_final: 0.5,
        }
    }

    /// `u* ≡ 0` with `f ≡ 0`.
    pub fn zero() -> MmsCase {
        MmsCase {
            name: "zero".into(),
            exact: Expr::constant(0.0),
            forcing: Forcing::ClosedForm(Expr::constant(0.0)),
            ..MmsCase::double_phase()
        }
    }

    fn forcing_field(&self, dim: usize) -> Field {
        match &self.forcing {
            Forcing::ClosedForm(e) => Field::Expr(e.clone()),
            Forcing::FineGrid { delta } => {
                let op = Arc::new(ContinuousOperator {
                    case: self.clone(),
                    dim,
                    delta: *delta,
                });
                Field::function(move |x, y, t| op.source(x, y, t))
            }
        }
    }

    /// Problem data on `grid` with this case's exponents, coefficients and source.
    pub fn spec(&self, grid: Grid) -> ProblemSpec {
        ProblemSpec {
            grid,
            p: Field::Expr(self.p.clone()),
            q: Field::Expr(self.q.clone()),
            a: Field::Expr(self.a.clone()),
            b: Field::Expr(self.b.clone()),
            f: self.forcing_field(grid.dim()),
            u0: Field::Expr(self.exact.clone()),
            alpha: 1.0,
            sigma: 8.0,
            r: 2.0,
            d: 20.0,
            eps_schedule: vec![self.eps.max(1e-12)],
        }
    }
}

/// `∂_t u* − div(F_ε ∇u*)` by nested fourth-order central differences.
struct ContinuousOperator {
    case: MmsCase,
    dim: usize,
    delta: f64,
}

fn d4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

impl ContinuousOperator {
    fn flux(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let u = &self.case.exact;
        let h = self.delta;
        let gx = d4(|s| u.eval(s, y, t), x, h);
        let gy = if self.dim == 2 { d4(|s| u.eval(x, s, t), y, h) } else { 0.0 };
        let c = &self.case;
        let fp = FluxPoint::new(c.p.eval(x, y, t), c.q.eval(x, y, t), c.a.eval(x, y, t), c.b.eval(x, y, t), c.eps);
        flux_value(&fp, &[gx, gy]).0
    }

    fn source(&self, x: f64, y: f64, t: f64) -> f64 {
        let h = self.delta;
        let ut = d4(|s| self.case.exact.eval(x, y, s), t, h);
        let mut div = d4(|s| self.flux(s, y, t)[0], x, h);
        if self.dim == 2 {
            div += d4(|s| self.flux(x, s, t)[1], y, h);
        }
        ut - div
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmsRow {
    pub cells: usize,
    pub h: f64,
    pub tau: f64,
    pub l2_error: f64,
    pub grad_error: f64,
    /// Observed order from the previous (coarser) row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmsTable {
    pub case: String,
    pub rows: Vec<MmsRow>,
}

impl MmsTable {
    pub fn min_order(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.order).reduce(f64::min)
    }
}

/// Final-time errors against `u*` on each grid of a refinement chain.
pub fn mms_convergence(case: &MmsCase, grids: &[Grid], config: &NewtonConfig) -> Result<MmsTable, HarnessError> {
    let mut rows: Vec<MmsRow> = Vec::with_capacity(grids.len());
    for grid in grids {
        let spec = case.spec(*grid);
        let evo = solve_evolution(&spec, case.eps, config)?;
        let uh = evo.trajectory.last();
        let exact = GridFunction::from_fn(*grid, uh.time, |x, y| case.exact.eval(x, y, uh.time));
        let err = uh.sub(&exact);
        let ge = gradient(&err);
        let h = grid.spacing()[0];
        let l2_error = err.l2_norm();
        let order = rows.last().map(|prev: &MmsRow| (prev.l2_error / l2_error).ln() / (prev.h / h).ln());
        rows.push(MmsRow {
            cells: grid.nx(),
            h,
            tau: grid.tau(),
            l2_error,
            grad_error: face_inner(grid, &ge, &ge).sqrt(),
            order,
        });
    }
    Ok(MmsTable {
        case: case.name.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub width: f64,
    pub metrics: ConvergenceMetrics,
}

/// Differences between solutions with mollified data and with the raw data, one row per width.
pub fn mollification_stability(
    spec: &ProblemSpec,
    widths: &[f64],
    eps: f64,
    config: &NewtonConfig,
) -> Result<Vec<StabilityRow>, HarnessError> {
    if widths.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(HarnessError::Precondition("widths must be strictly decreasing".into()));
    }
    let mollified: Vec<ProblemSpec> = widths
        .iter()
        .map(|&w| mollify_coefficients(spec, w).map(|m| m.0))
        .collect::<Result<_, _>>()?;
    let raw = solve_evolution(spec, eps, config)?;
    widths
        .iter()
        .zip(&mollified)
        .map(|(&width, m)| {
            let evo = solve_evolution(m, eps, config)?;
            let metrics = convergence_metrics(&evo.trajectory, &raw.trajectory, spec, eps)?;
            Ok(StabilityRow { width, metrics })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_spec(n: usize, nt: usize) -> ProblemSpec {
        let mut spec = MmsCase::heat().spec(Grid::unit_1d(n, nt, 0.1).unwrap());
        spec.sigma = 8.0;
        spec
    }

    #[test]
    fn zero_solution_gives_zero_report() {
        let spec = heat_spec(16, 4);
        let u = Trajectory::zeros(spec.grid);
        let rep = regularity_report(&u, &spec, 0.0, 2.0, &default_s_list(1)).unwrap();
        assert!(rep.quantities().iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn r_gate_and_s_range() {
        let spec = heat_spec(16, 2);
        let u = Trajectory::zeros(spec.grid);
        assert!(matches!(
            regularity_report(&u, &spec, 0.0, 1.5, &[0.3]),
            Err(HarnessError::InadmissibleR { .. })
        ));
        assert!(matches!(
            regularity_report(&u, &spec, 0.0, 2.0, &[1.5]),
            Err(HarnessError::InvalidS { .. })
        ));
    }

    #[test]
    fn g_matches_gradient_modulus_in_linear_case() {
        let g = Grid::unit_2d(12, 1, 0.1).unwrap();
        let u = GridFunction::from_fn(g, 0.0, |x, y| x * x + y);
        let ones = vec![2.0; g.len()];
        let half = vec![0.5; g.len()];
        let gf = g_field(&g, &u.values, &ones, &ones, &half, &half, 2.0);
        for c in 0..g.len() {
            let (xs, n) = g.quadrants(c).gradients(&u.values);
            let mean = xs[..n].iter().map(|x| norm(*x)).sum::<f64>() / n as f64;
            assert!((gf[c] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn g_reduces_to_power_of_gradient_when_r_equals_p() {
        let g = Grid::unit_1d(16, 1, 0.1).unwrap();
        let u = GridFunction::from_fn(g, 0.0, |x, _| (2.0 * x).sin());
        let p = vec![3.0; 16];
        let (a, b) = (vec![0.3; 16], vec![0.9; 16]);
        let gf = g_field(&g, &u.values, &p, &p, &a, &b, 3.0);
        for c in 0..16 {
            let (xs, n) = g.quadrants(c).gradients(&u.values);
            let want = xs[..n].iter().map(|x| 1.2 * norm(*x).powi(2)).sum::<f64>() / n as f64;
            assert!((gf[c] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn fine_grid_forcing_matches_closed_form() {
        let mut case = MmsCase::heat();
        case.forcing = Forcing::FineGrid { delta: 1e-3 };
        let op = ContinuousOperator {
            case,
            dim: 1,
            delta: 1e-3,
        };
        for &(x, t) in &[(0.2, 0.0), (0.5, 0.05), (0.9, 0.1)] {
            assert!(op.source(x, 0.0, t).abs() < 1e-7, "{}", op.source(x, 0.0, t));
        }
        let c = MmsCase::double_phase();
        let op = ContinuousOperator {
            case: c.clone(),
            dim: 2,
            delta: 1e-3,
        };
        // With p = q = 2 and a = b = ½ the operator is u_t − (1+2ε)Δu.
        let lin = MmsCase {
            p: Expr::constant(2.0),
            q: Expr::constant(2.0),
            ..c
        };
        let op2 = ContinuousOperator {
            case: lin,
            dim: 2,
            delta: 1e-3,
        };
        let (x, y, t) = (0.3, 0.7, 0.2);
        let s = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        let want = s + 1.02 * 2.0 * std::f64::consts::PI.powi(2) * s * (1.0 + t);
        assert!((op2.source(x, y, t) - want).abs() < 1e-6);
        assert!(op.source(x, y, t).is_finite());
    }

    #[test]
    fn zero_case_is_exact() {
        let grids = [Grid::unit_2d(8, 2, 0.5).unwrap(), Grid::unit_2d(16, 2, 0.5).unwrap()];
        let table = mms_convergence(&MmsCase::zero(), &grids, &NewtonConfig::default()).unwrap();
        assert!(table.rows.iter().all(|r| r.l2_error == 0.0 && r.grad_error == 0.0));
    }

    #[test]
    fn preservation_needs_three_meshes() {
        assert!(preservation_check(&[]).is_err());
    }

    #[test]
    fn smooth_data_is_stable_under_mollification() {
        let spec = heat_spec(32, 4);
        let rows = mollification_stability(&spec, &[0.1, 0.05], 0.0, &NewtonConfig::for_grid(&spec.grid)).unwrap();
        for row in rows {
            // constant coefficients are reproduced exactly; only u0 is smoothed
            assert!(row.metrics.n_modular.is_finite());
        }
        assert!(matches!(
            mollification_stability(&spec, &[0.05, 0.1], 0.0, &NewtonConfig::for_grid(&spec.grid)),
            Err(HarnessError::Precondition(_))
        ));
        assert!(matches!(
            mollification_stability(&spec, &[0.6], 0.0, &NewtonConfig::for_grid(&spec.grid)),
            Err(HarnessError::Problem(ProblemError::WidthTooLarge { .. }))
        ));
    }
}
