//! Python bindings for `dphase`: flux algebra, assumption checks, solves and reports.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dphase::config::RunConfig;
use dphase::flux::{self, FluxPoint};
use dphase::grid::{Grid, GridFunction};
use dphase::harness::{self, MmsCase};
use dphase::problem::{self, ProblemSpec};
use dphase::solver::{self, Evolution};
use dphase::varexp;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Pointwise regularized flux `F_ε(ξ)ξ` for fixed exponents and coefficients.
#[pyclass(name = "FluxPoint", module = "dphase_py", from_py_object)]
#[derive(Clone)]
pub struct PyFluxPoint {
    inner: FluxPoint,
}

macro_rules! by_dim {
    ($xi:expr, |$arr:ident| $body:expr) => {
        match $xi.len() {
            1 => {
                let $arr: [f64; 1] = [$xi[0]];
                $body
            }
            2 => {
                let $arr: [f64; 2] = [$xi[0], $xi[1]];
                $body
            }
            3 => {
                let $arr: [f64; 3] = [$xi[0], $xi[1], $xi[2]];
                $body
            }
            n => Err(value_err(format!("vectors of length 1..=3 supported, got {n}"))),
        }
    };
}

fn rows<const N: usize>(m: [[f64; N]; N]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

#[pymethods]
impl PyFluxPoint {
    #[new]
    #[pyo3(signature = (p, q, a, b, eps))]
    fn new(p: f64, q: f64, a: f64, b: f64, eps: f64) -> PyResult<Self> {
        if !(a >= 0.0 && b >= 0.0 && eps >= 0.0) {
            return Err(value_err("a, b and eps must be nonnegative"));
        }
        Ok(PyFluxPoint {
            inner: FluxPoint::new(p, q, a, b, eps),
        })
    }

    #[getter]
    fn a_eps(&self) -> f64 {
        self.inner.a_eps
    }

    #[getter]
    fn b_eps(&self) -> f64 {
        self.inner.b_eps
    }

    fn value(&self, xi: Vec<f64>) -> PyResult<Vec<f64>> {
        by_dim!(xi, |x| Ok(flux::flux_value(&self.inner, &x).0.to_vec()))
    }

    fn jacobian(&self, xi: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        by_dim!(xi, |x| flux::flux_jacobian(&self.inner, &x).map(rows).map_err(value_err))
    }

    fn monotonicity_gap(&self, xi: Vec<f64>, eta: Vec<f64>) -> PyResult<f64> {
        if xi.len() != eta.len() {
            return Err(value_err("xi and eta differ in length"));
        }
        by_dim!(xi, |x| {
            let mut e = x;
            e.copy_from_slice(&eta);
            Ok(flux::monotonicity_gap(&self.inner, &x, &e))
        })
    }

    /// `(lower, middle, upper)` of the chain of bounds on `F^{(s1,s2)}_ε w_ε`.
    fn null_eps_bound(&self, xi: Vec<f64>, s1: f64, s2: f64) -> PyResult<(f64, f64, f64)> {
        by_dim!(xi, |x| {
            let b = flux::null_eps_bound(&self.inner, &x, s1, s2);
            Ok((b.lower, b.middle, b.upper))
        })
    }

    fn __repr__(&self) -> String {
        let f = &self.inner;
        format!("FluxPoint(p={}, q={}, a_eps={}, b_eps={}, eps={})", f.p, f.q, f.a_eps, f.b_eps, f.eps)
    }
}

/// `(G_e(η), min{1, e−1}·tr(H²))` for a symmetric 2×2 or 3×3 matrix `h`.
#[pyfunction]
fn hessian_quadratic_form(h: Vec<Vec<f64>>, eta: Vec<f64>, e: f64, r: f64) -> PyResult<(f64, f64)> {
    if h.len() != eta.len() || h.iter().any(|row| row.len() != eta.len()) {
        return Err(value_err("h must be square with the size of eta"));
    }
    let trace_sq: f64 = h.iter().flatten().map(|v| v * v).sum();
    let rhs = flux::hessian_constant(e) * trace_sq;
    let lhs = match eta.len() {
        2 => flux::hessian_quadratic_form(&[[h[0][0], h[0][1]], [h[1][0], h[1][1]]], &[eta[0], eta[1]], e, r),
        3 => {
            let m = [
                [h[0][0], h[0][1], h[0][2]],
                [h[1][0], h[1][1], h[1][2]],
                [h[2][0], h[2][1], h[2][2]],
            ];
            flux::hessian_quadratic_form(&m, &[eta[0], eta[1], eta[2]], e, r)
        }
        n => return Err(value_err(format!("dimension 2 or 3 supported, got {n}"))),
    }
    .map_err(value_err)?;
    Ok((lhs, rhs))
}

/// `(|ξ|^λ|ln|ξ||, C(μ)(1 + |ξ|^{λ+μ}))`.
#[pyfunction]
fn log_power_bound(xi_norm: f64, lambda: f64, mu: f64) -> PyResult<(f64, f64)> {
    flux::log_power_bound(xi_norm, lambda, mu).map_err(value_err)
}

/// `(lower, upper)` of the admissible interval for `r`; `upper` may be `inf`.
#[pyfunction]
#[pyo3(signature = (n, sigma, p_minus, q_minus, p_plus, q_plus))]
fn admissible_r_interval(
    n: usize,
    sigma: f64,
    p_minus: f64,
    q_minus: f64,
    p_plus: f64,
    q_plus: f64,
) -> PyResult<(f64, f64)> {
    let iv = problem::admissible_r_interval(n, sigma, p_minus, q_minus, p_plus, q_plus).map_err(value_err)?;
    Ok((iv.lower, iv.upper))
}

/// Luxemburg norm of cell values on `[0, length]` with `len(values)` cells.
#[pyfunction]
#[pyo3(signature = (values, exponents, length = 1.0, tol = varexp::DEFAULT_LUXEMBURG_TOL))]
fn luxemburg_norm_1d(values: Vec<f64>, exponents: Vec<f64>, length: f64, tol: f64) -> PyResult<f64> {
    let grid = Grid::new(1, [values.len(), 1], [length, 1.0], 1, 1.0).map_err(value_err)?;
    let v = GridFunction::from_values(grid, 0.0, values).map_err(value_err)?;
    varexp::luxemburg_norm(&v, &exponents, tol).map_err(value_err)
}

fn parse(config_text: &str) -> PyResult<RunConfig> {
    RunConfig::parse(config_text, Path::new(".")).map_err(value_err)
}

/// Validation report of a TOML config, as JSON.
#[pyfunction]
fn validate_config(config_text: &str) -> PyResult<String> {
    let cfg = parse(config_text)?;
    let report = problem::validate(&cfg.spec).map_err(value_err)?;
    serde_json::to_string(&report).map_err(runtime_err)
}

/// A computed evolution together with its problem data.
#[pyclass(name = "Solution", module = "dphase_py")]
pub struct PySolution {
    evo: Evolution,
    spec: ProblemSpec,
    r: f64,
    s_list: Vec<f64>,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn eps(&self) -> f64 {
        self.evo.eps
    }

    #[getter]
    fn cells(&self) -> (usize, usize) {
        let [nx, ny] = self.spec.grid.cells();
        (nx, ny)
    }

    #[getter]
    fn nt(&self) -> usize {
        self.spec.grid.nt()
    }

    #[getter]
    fn newton_iters(&self) -> usize {
        self.evo.newton_iters()
    }

    #[getter]
    fn energy_residual_max(&self) -> f64 {
        self.evo.energy_residual_max()
    }

    #[getter]
    fn time_derivative_norm(&self) -> f64 {
        self.evo.time_derivative_norm()
    }

    /// Cell values at time level `level` (row-major, x fastest).
    fn slice(&self, level: usize) -> PyResult<Vec<f64>> {
        self.evo
            .trajectory
            .slices
            .get(level)
            .cloned()
            .ok_or_else(|| value_err(format!("level {level} > nt = {}", self.spec.grid.nt())))
    }

    fn centers(&self) -> Vec<(f64, f64)> {
        let g = &self.spec.grid;
        (0..g.len()).map(|c| (g.center(c)[0], g.center(c)[1])).collect()
    }

    /// Regularity report as JSON; defaults to the config's `r` and `s` list.
    #[pyo3(signature = (r = None, s_list = None))]
    fn report(&self, r: Option<f64>, s_list: Option<Vec<f64>>) -> PyResult<String> {
        let rep = harness::regularity_report(
            &self.evo.trajectory,
            &self.spec,
            self.evo.eps,
            r.unwrap_or(self.r),
            &s_list.unwrap_or_else(|| self.s_list.clone()),
        )
        .map_err(value_err)?;
        serde_json::to_string(&rep).map_err(runtime_err)
    }
}

/// Solve the configured problem at `eps` (default: last entry of the schedule).
#[pyfunction]
#[pyo3(signature = (config_text, eps = None))]
fn solve(py: Python<'_>, config_text: &str, eps: Option<f64>) -> PyResult<PySolution> {
    let cfg = parse(config_text)?;
    let eps = eps.unwrap_or_else(|| cfg.final_eps());
    let evo = py
        .detach(|| solver::solve_evolution(&cfg.spec, eps, &cfg.newton))
        .map_err(runtime_err)?;
    Ok(PySolution {
        evo,
        r: cfg.spec.r,
        s_list: cfg.s_list,
        spec: cfg.spec,
    })
}

/// `[(cells, l2_error, order)]` for a built-in manufactured case on a mesh chain.
#[pyfunction]
fn mms_study(py: Python<'_>, case: &str, meshes: Vec<usize>) -> PyResult<Vec<(usize, f64, Option<f64>)>> {
    let (case, dim) = match case {
        "heat" => (MmsCase::heat(), 1),
        "double_phase" => (MmsCase::double_phase(), 2),
        other => return Err(value_err(format!("unknown case '{other}'"))),
    };
    let grids = meshes
        .iter()
        .map(|&n| {
            if dim == 1 {
                let h = 1.0 / n as f64;
                Grid::unit_1d(n, (2.0 * case.t_final / (h * h)).ceil() as usize, case.t_final)
            } else {
                Grid::unit_2d(n, 5, case.t_final)
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let cfg = solver::NewtonConfig::for_grid(&grids[0]);
    let table = py
        .detach(|| harness::mms_convergence(&case, &grids, &cfg))
        .map_err(runtime_err)?;
    Ok(table.rows.iter().map(|r| (r.cells, r.l2_error, r.order)).collect())
}

#[pymodule]
pub fn dphase_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFluxPoint>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(hessian_quadratic_form, m)?)?;
    m.add_function(wrap_pyfunction!(log_power_bound, m)?)?;
    m.add_function(wrap_pyfunction!(admissible_r_interval, m)?)?;
    m.add_function(wrap_pyfunction!(luxemburg_norm_1d, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(mms_study, m)?)?;
    Ok(())
}
