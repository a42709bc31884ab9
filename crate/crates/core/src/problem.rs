//! Problem data: exponents, modulating coefficients, source, initial datum and the
//! structural constants, together with the admissibility checks run before any solve.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::grid::{Grid, GridError, GridFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("field '{field}' does not match the grid: {detail}")]
    GridMismatch { field: String, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mollifier width {width} too large: support exceeds the domain side {side}")]
    WidthTooLarge { width: f64, side: f64 },
}

/// Closure-backed field `(x, y, t) ↦ value`.
pub type FieldFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Cell-centre samples; one slice for time-independent data or `nt + 1` slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub cells: [usize; 2],
    pub slices: Vec<Vec<f64>>,
}

#[derive(Clone)]
pub enum Field {
    Expr(Expr),
    Sampled(SampledField),
    Function(FieldFn),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Expr(e) => write!(f, "Expr({e})"),
            Field::Sampled(s) => write!(f, "Sampled({:?}, {} slices)", s.cells, s.slices.len()),
            Field::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Field {
    pub fn constant(v: f64) -> Field {
        Field::Expr(Expr::constant(v))
    }

    pub fn expr(src: &str) -> Result<Field, crate::expr::ExprError> {
        Ok(Field::Expr(Expr::parse(src)?))
    }

    pub fn function(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Field {
        Field::Function(Arc::new(f))
    }

    pub fn at_point(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        match self {
            Field::Expr(e) => Some(e.eval(x, y, t)),
            Field::Function(f) => Some(f(x, y, t)),
            Field::Sampled(_) => None,
        }
    }

    fn check(&self, name: &str, grid: &Grid) -> Result<(), ProblemError> {
        if let Field::Sampled(s) = self {
            let bad_shape = s.cells != grid.cells();
            let bad_slices = s.slices.len() != 1 && s.slices.len() != grid.nt() + 1;
            let bad_len = s.slices.iter().any(|v| v.len() != grid.len());
            if bad_shape || bad_slices || bad_len {
                return Err(ProblemError::GridMismatch {
                    field: name.to_string(),
                    detail: format!(
                        "samples {:?} x {} slices, grid {:?} with {} levels",
                        s.cells,
                        s.slices.len(),
                        grid.cells(),
                        grid.nt() + 1
                    ),
                });
            }
        }
        Ok(())
    }

    /// Cell-centre values at time level `level`.
    pub fn sample(&self, grid: &Grid, level: usize) -> Vec<f64> {
        let t = grid.time(level);
        match self {
            Field::Sampled(s) => {
                if s.slices.len() == 1 {
                    s.slices[0].clone()
                } else {
                    s.slices[level].clone()
                }
            }
            Field::Expr(e) => (0..grid.len())
                .map(|c| {
                    let [x, y] = grid.center(c);
                    e.eval(x, y, t)
                })
                .collect(),
            Field::Function(f) => (0..grid.len())
                .map(|c| {
                    let [x, y] = grid.center(c);
                    f(x, y, t)
                })
                .collect(),
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            Field::Expr(e) => e.is_time_independent(),
            Field::Sampled(s) => s.slices.len() == 1,
            Field::Function(_) => false,
        }
    }
}

/// Full problem description on a grid over `Q_T`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub p: Field,
    pub q: Field,
    pub a: Field,
    pub b: Field,
    pub f: Field,
    pub u0: Field,
    pub alpha: f64,
    pub sigma: f64,
    pub r: f64,
    pub d: f64,
    pub eps_schedule: Vec<f64>,
}

/// Coefficient data sampled at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelData {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn check_fields(&self) -> Result<(), ProblemError> {
        for (name, field) in self.named_fields() {
            field.check(name, &self.grid)?;
        }
        Ok(())
    }

    fn named_fields(&self) -> [(&'static str, &Field); 6] {
        [
            ("p", &self.p),
            ("q", &self.q),
            ("a", &self.a),
            ("b", &self.b),
            ("f", &self.f),
            ("u0", &self.u0),
        ]
    }

    /// Same data on another grid; sampled fields must already match it.
    pub fn with_grid(&self, grid: Grid) -> Result<ProblemSpec, ProblemError> {
        let mut out = self.clone();
        out.grid = grid;
        out.check_fields()?;
        Ok(out)
    }

    /// Exchange the two phases: `(a, p) ↔ (b, q)`.
    pub fn swap_phases(&self) -> ProblemSpec {
        let mut out = self.clone();
        std::mem::swap(&mut out.a, &mut out.b);
        std::mem::swap(&mut out.p, &mut out.q);
        out
    }

    pub fn level(&self, level: usize) -> LevelData {
        LevelData {
            p: self.p.sample(&self.grid, level),
            q: self.q.sample(&self.grid, level),
            a: self.a.sample(&self.grid, level),
            b: self.b.sample(&self.grid, level),
            f: self.f.sample(&self.grid, level),
        }
    }

    pub fn initial_condition(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            time: 0.0,
            values: self.u0.sample(&self.grid, 0),
        }
    }

    /// `[min(p,q)]⁻`, `[max(p,q)]⁺` over all grid levels.
    pub fn exponent_extrema(&self) -> Result<ExponentField, ProblemError> {
        ExponentField::from_spec(self)
    }
}

fn location(grid: &Grid, cell: usize, level: usize) -> String {
    let [x, y] = grid.center(cell);
    let (i, j) = grid.coords(cell);
    if grid.dim() == 1 {
        format!("cell {i} level {level} (x={x:.6}, t={:.6})", grid.time(level))
    } else {
        format!(
            "cell ({i},{j}) level {level} (x={x:.6}, y={y:.6}, t={:.6})",
            grid.time(level)
        )
    }
}

/// Sampled exponents with their extrema and Lipschitz estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField {
    /// `p[level][cell]` for levels `0..=nt`.
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub p_minus: f64,
    pub p_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub lip_pq: f64,
    pub s_under: Vec<Vec<f64>>,
    pub s_over: Vec<Vec<f64>>,
    /// Largest `|p − q|` and where it occurs.
    pub max_gap: (f64, usize, usize),
    pub argmin_p: (usize, usize),
    pub argmin_q: (usize, usize),
}

impl ExponentField {
    pub fn from_spec(spec: &ProblemSpec) -> Result<ExponentField, ProblemError> {
        spec.p.check("p", &spec.grid)?;
        spec.q.check("q", &spec.grid)?;
        let grid = &spec.grid;
        let levels = 0..=grid.nt();
        let p: Vec<Vec<f64>> = levels.clone().map(|n| spec.p.sample(grid, n)).collect();
        let q: Vec<Vec<f64>> = levels.map(|n| spec.q.sample(grid, n)).collect();
        let mut out = ExponentField {
            s_under: Vec::with_capacity(p.len()),
            s_over: Vec::with_capacity(p.len()),
            p_minus: f64::INFINITY,
            p_plus: f64::NEG_INFINITY,
            q_minus: f64::INFINITY,
            q_plus: f64::NEG_INFINITY,
            lip_pq: 0.0,
            max_gap: (0.0, 0, 0),
            argmin_p: (0, 0),
            argmin_q: (0, 0),
            p: Vec::new(),
            q: Vec::new(),
        };
        for (n, (pl, ql)) in p.iter().zip(&q).enumerate() {
            for (c, (&pv, &qv)) in pl.iter().zip(ql).enumerate() {
                if pv < out.p_minus {
                    out.p_minus = pv;
                    out.argmin_p = (c, n);
                }
                if qv < out.q_minus {
                    out.q_minus = qv;
                    out.argmin_q = (c, n);
                }
                out.p_plus = out.p_plus.max(pv);
                out.q_plus = out.q_plus.max(qv);
                let gap = (pv - qv).abs();
                if gap > out.max_gap.0 || !gap.is_finite() {
                    out.max_gap = (gap, c, n);
                }
            }
            out.s_under.push(pl.iter().zip(ql).map(|(a, b)| a.min(*b)).collect());
            out.s_over.push(pl.iter().zip(ql).map(|(a, b)| a.max(*b)).collect());
        }
        out.lip_pq = lipschitz_estimate(grid, &p).max(lipschitz_estimate(grid, &q));
        out.p = p;
        out.q = q;
        Ok(out)
    }

    pub fn s_under_minus(&self) -> f64 {
        self.p_minus.min(self.q_minus)
    }

    pub fn s_over_plus(&self) -> f64 {
        self.p_plus.max(self.q_plus)
    }
}

/// Largest nearest-neighbour difference quotient in space and time.
fn lipschitz_estimate(grid: &Grid, levels: &[Vec<f64>]) -> f64 {
    let h = grid.spacing();
    let tau = grid.tau();
    let mut lip: f64 = 0.0;
    for (n, v) in levels.iter().enumerate() {
        for c in 0..grid.len() {
            let (i, j) = grid.coords(c);
            if i + 1 < grid.nx() {
                lip = lip.max((v[grid.index(i + 1, j)] - v[c]).abs() / h[0]);
            }
            if grid.dim() == 2 && j + 1 < grid.ny() {
                lip = lip.max((v[grid.index(i, j + 1)] - v[c]).abs() / h[1]);
            }
            if n + 1 < levels.len() {
                lip = lip.max((levels[n + 1][c] - v[c]).abs() / tau);
            }
        }
    }
    if lip.is_nan() {
        f64::INFINITY
    } else {
        lip
    }
}

/// Sampled coefficients, their lower bound and discrete `L^d(Q_T)` norms of derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub alpha: f64,
    pub d: f64,
    pub min_a: (f64, usize, usize),
    pub min_b: (f64, usize, usize),
    pub min_sum: (f64, usize, usize),
    pub grad_a_ld: f64,
    pub grad_b_ld: f64,
    pub at_ld: f64,
    pub bt_ld: f64,
}

impl CoefficientField {
    pub fn from_spec(spec: &ProblemSpec) -> Result<CoefficientField, ProblemError> {
        spec.a.check("a", &spec.grid)?;
        spec.b.check("b", &spec.grid)?;
        let grid = &spec.grid;
        let a: Vec<Vec<f64>> = (0..=grid.nt()).map(|n| spec.a.sample(grid, n)).collect();
        let b: Vec<Vec<f64>> = (0..=grid.nt()).map(|n| spec.b.sample(grid, n)).collect();
        let mut min_a = (f64::INFINITY, 0, 0);
        let mut min_b = (f64::INFINITY, 0, 0);
        let mut min_sum = (f64::INFINITY, 0, 0);
        for n in 0..a.len() {
            for c in 0..grid.len() {
                if a[n][c] < min_a.0 {
                    min_a = (a[n][c], c, n);
                }
                if b[n][c] < min_b.0 {
                    min_b = (b[n][c], c, n);
                }
                let s = a[n][c] + b[n][c];
                if s < min_sum.0 {
                    min_sum = (s, c, n);
                }
            }
        }
        let d = spec.d;
        Ok(CoefficientField {
            grad_a_ld: gradient_ld_norm(grid, &a, d),
            grad_b_ld: gradient_ld_norm(grid, &b, d),
            at_ld: time_derivative_ld_norm(grid, &a, d),
            bt_ld: time_derivative_ld_norm(grid, &b, d),
            a,
            b,
            alpha: spec.alpha,
            d,
            min_a,
            min_b,
            min_sum,
        })
    }
}

/// Cell-centred gradient of a non-Dirichlet field: centred inside, one-sided at the boundary.
pub fn data_gradient(grid: &Grid, v: &[f64], cell: usize) -> [f64; 2] {
    let (i, j) = grid.coords(cell);
    let h = grid.spacing();
    let diff = |lo: usize, hi: usize, n: usize, at: &dyn Fn(usize) -> f64, h: f64| {
        if n < 2 {
            0.0
        } else if lo == 0 {
            (at(1) - at(0)) / h
        } else if hi + 1 == n {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(hi + 1) - at(lo - 1)) / (2.0 * h)
        }
    };
    let gx = diff(i, i, grid.nx(), &|k| v[grid.index(k, j)], h[0]);
    let gy = if grid.dim() == 2 {
        diff(j, j, grid.ny(), &|k| v[grid.index(i, k)], h[1])
    } else {
        0.0
    };
    [gx, gy]
}

/// `‖∇v‖_{L^d(Q_T)}` with right-endpoint time quadrature over levels `1..=nt`.
pub fn gradient_ld_norm(grid: &Grid, levels: &[Vec<f64>], d: f64) -> f64 {
    let w = grid.cell_volume() * grid.tau();
    let mut s = 0.0;
    for v in levels.iter().skip(1) {
        for c in 0..grid.len() {
            let g = data_gradient(grid, v, c);
            s += w * (g[0] * g[0] + g[1] * g[1]).sqrt().powf(d);
        }
    }
    s.powf(1.0 / d)
}

fn time_derivative_ld_norm(grid: &Grid, levels: &[Vec<f64>], d: f64) -> f64 {
    let tau = grid.tau();
    let w = grid.cell_volume() * tau;
    let mut s = 0.0;
    for n in 1..levels.len() {
        for c in 0..grid.len() {
            s += w * ((levels[n][c] - levels[n - 1][c]) / tau).abs().powf(d);
        }
    }
    s.powf(1.0 / d)
}

/// One named assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub pass: bool,
    /// Positive margins mean the assumption holds with room to spare.
    pub margin: f64,
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub accepted: bool,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == name)
    }

    pub fn violations(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Admissible interval for the initial-gradient integrability order `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RInterval {
    pub lower: f64,
    /// `+∞` when the source is integrable enough.
    pub upper: f64,
}

impl RInterval {
    pub fn is_empty(&self) -> bool {
        self.lower > self.upper
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lower && r <= self.upper
    }
}

pub fn admissible_r_interval(
    n: usize,
    sigma: f64,
    p_minus: f64,
    q_minus: f64,
    p_plus: f64,
    q_plus: f64,
) -> Result<RInterval, ProblemError> {
    if !(sigma > 2.0) {
        return Err(ProblemError::Domain(format!("sigma = {sigma} must exceed 2")));
    }
    let nf = n as f64;
    let lower = p_plus.max(q_plus).max(2.0);
    if sigma >= nf + 2.0 {
        return Ok(RInterval {
            lower,
            upper: f64::INFINITY,
        });
    }
    let m = p_minus.min(q_minus);
    let upper = nf * (m * (sigma - 1.0) - sigma + 2.0) / (nf + 2.0 - sigma);
    Ok(RInterval { lower, upper })
}

/// The `μ`-dependent upper bound `κ(μ) = 2(s̲⁻(σ−1) − σ + 2)/(σ − (σ−2)/μ)` on `r`
/// arising in the a-priori estimate; decreasing in `μ ∈ (N/(N+2), 1)` with the
/// supremum equal to the upper end of [`admissible_r_interval`].
pub fn r_bound_kappa(n: usize, sigma: f64, s_under_minus: f64, mu: f64) -> Result<f64, ProblemError> {
    let nf = n as f64;
    if !(sigma > 2.0 && sigma < nf + 2.0) {
        return Err(ProblemError::Domain(format!("sigma = {sigma} not in (2, N+2)")));
    }
    if !(mu > nf / (nf + 2.0) && mu < 1.0) {
        return Err(ProblemError::Domain(format!("mu = {mu} not in (N/(N+2), 1)")));
    }
    Ok(2.0 * (s_under_minus * (sigma - 1.0) - sigma + 2.0) / (sigma - (sigma - 2.0) / mu))
}

fn check(name: &str, pass: bool, margin: f64, location: Option<String>) -> AssumptionCheck {
    AssumptionCheck {
        assumption: name.to_string(),
        pass,
        margin,
        location,
    }
}

/// Largest `|u0|` on `∂Ω` for closed-form data. Sampled data vanishes there by the ghost convention.
fn initial_boundary_trace(spec: &ProblemSpec) -> (f64, Option<String>) {
    let g = &spec.grid;
    let [lx, ly] = g.lengths();
    let h = g.spacing();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if g.dim() == 1 {
        pts.push((0.0, 0.0));
        pts.push((lx, 0.0));
    } else {
        for j in 0..g.ny() {
            let y = (j as f64 + 0.5) * h[1];
            pts.push((0.0, y));
            pts.push((lx, y));
        }
        for i in 0..g.nx() {
            let x = (i as f64 + 0.5) * h[0];
            pts.push((x, 0.0));
            pts.push((x, ly));
        }
        for &(x, y) in &[(0.0, 0.0), (lx, 0.0), (0.0, ly), (lx, ly)] {
            pts.push((x, y));
        }
    }
    let mut worst = (0.0, None);
    for (x, y) in pts {
        if let Some(v) = spec.u0.at_point(x, y, 0.0) {
            if !(v.abs() <= worst.0) {
                worst = (v.abs(), Some(format!("x={x:.6}, y={y:.6}")));
            }
        }
    }
    worst
}

/// Check every structural assumption and report margins.
pub fn validate(spec: &ProblemSpec) -> Result<ValidationReport, ProblemError> {
    spec.check_fields()?;
    let grid = &spec.grid;
    let nf = spec.dim() as f64;
    let ex = ExponentField::from_spec(spec)?;
    let co = CoefficientField::from_spec(spec)?;
    let mut checks = Vec::new();

    let lower = 2.0 * nf / (nf + 2.0);
    checks.push(check(
        "p_lower_bound",
        ex.p_minus > lower,
        ex.p_minus - lower,
        Some(location(grid, ex.argmin_p.0, ex.argmin_p.1)),
    ));
    checks.push(check(
        "q_lower_bound",
        ex.q_minus > lower,
        ex.q_minus - lower,
        Some(location(grid, ex.argmin_q.0, ex.argmin_q.1)),
    ));
    let gap_bound = 2.0 / (nf + 2.0);
    let (gap, gc, gn) = ex.max_gap;
    checks.push(check(
        "balance_condition",
        gap < gap_bound,
        gap_bound - gap,
        Some(location(grid, gc, gn)),
    ));
    checks.push(check("lipschitz_pq", ex.lip_pq.is_finite(), ex.lip_pq, None));

    let min_ab = if co.min_a.0 <= co.min_b.0 { co.min_a } else { co.min_b };
    checks.push(check(
        "coefficient_nonnegativity",
        min_ab.0 >= 0.0,
        min_ab.0,
        Some(location(grid, min_ab.1, min_ab.2)),
    ));
    checks.push(check(
        "coefficient_lower_bound",
        spec.alpha > 0.0 && co.min_sum.0 >= spec.alpha,
        co.min_sum.0 - spec.alpha,
        Some(location(grid, co.min_sum.1, co.min_sum.2)),
    ));
    let d_bound = 2.0 + 0.5 * (nf + 2.0) * (ex.s_over_plus() + spec.r);
    let norms_finite = [co.grad_a_ld, co.grad_b_ld, co.at_ld, co.bt_ld]
        .iter()
        .all(|v| v.is_finite());
    checks.push(check(
        "coefficient_integrability",
        spec.d > d_bound && norms_finite,
        spec.d - d_bound,
        None,
    ));
    checks.push(check(
        "source_integrability",
        spec.sigma > 2.0,
        spec.sigma - 2.0,
        None,
    ));

    let r_lower = ex.p_plus.max(ex.q_plus).max(2.0);
    checks.push(check("r_lower_bound", spec.r >= r_lower, spec.r - r_lower, None));
    let r_upper = if spec.sigma > 2.0 {
        admissible_r_interval(spec.dim(), spec.sigma, ex.p_minus, ex.q_minus, ex.p_plus, ex.q_plus)?.upper
    } else {
        f64::NAN
    };
    checks.push(check("r_upper_bound", spec.r <= r_upper, r_upper - spec.r, None));

    let (trace, where_) = initial_boundary_trace(spec);
    let u0_scale = spec.u0.sample(grid, 0).iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let trace_tol = 1e-12 * u0_scale;
    checks.push(check("initial_boundary_trace", trace <= trace_tol, trace_tol - trace, where_));

    let sched = &spec.eps_schedule;
    let sched_ok = !sched.is_empty()
        && sched.iter().all(|e| *e > 0.0 && *e < 1.0)
        && sched.windows(2).all(|w| w[1] < w[0]);
    let sched_margin = sched.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(check("epsilon_schedule", sched_ok, sched_margin, None));

    Ok(ValidationReport {
        accepted: checks.iter().all(|c| c.pass),
        checks,
    })
}

/// Derivative norms before and after mollification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollificationReport {
    pub width: f64,
    pub grad_a_ld_before: f64,
    pub grad_a_ld_after: f64,
    pub grad_b_ld_before: f64,
    pub grad_b_ld_after: f64,
    pub min_sum_after: f64,
}

/// Discrete mollifier weights on the grid lattice: a normalised bump of radius `width`.
fn kernel(grid: &Grid, width: f64) -> Vec<(isize, isize, f64)> {
    let h = grid.spacing();
    let kx = (width / h[0]).floor() as isize;
    let ky = if grid.dim() == 2 {
        (width / h[1]).floor() as isize
    } else {
        0
    };
    let mut out = Vec::new();
    for dj in -ky..=ky {
        for di in -kx..=kx {
            let dx = di as f64 * h[0];
            let dy = if grid.dim() == 2 { dj as f64 * h[1] } else { 0.0 };
            let rho = (dx * dx + dy * dy).sqrt() / width;
            if rho < 1.0 {
                out.push((di, dj, (-1.0 / (1.0 - rho * rho)).exp()));
            }
        }
    }
    let total: f64 = out.iter().map(|k| k.2).sum();
    for k in &mut out {
        k.2 /= total;
    }
    out
}

fn reflect(i: isize, n: usize) -> (usize, bool) {
    let n = n as isize;
    if i < 0 {
        ((-i - 1) as usize, true)
    } else if i >= n {
        ((2 * n - i - 1) as usize, true)
    } else {
        (i as usize, false)
    }
}

/// Convolve cell values with the kernel; the field is extended evenly or oddly across `∂Ω`.
fn convolve(grid: &Grid, v: &[f64], kern: &[(isize, isize, f64)], odd: bool) -> Vec<f64> {
    (0..grid.len())
        .map(|c| {
            let (i, j) = grid.coords(c);
            let mut s = 0.0;
            for &(di, dj, w) in kern {
                let (ii, fx) = reflect(i as isize + di, grid.nx());
                let (jj, fy) = if grid.dim() == 2 {
                    reflect(j as isize + dj, grid.ny())
                } else {
                    (0, false)
                };
                let sign = if odd && (fx ^ fy) { -1.0 } else { 1.0 };
                s += w * sign * v[grid.index(ii, jj)];
            }
            s
        })
        .collect()
}

fn mollify_field(grid: &Grid, field: &Field, kern: &[(isize, isize, f64)], odd: bool) -> Field {
    let levels: Vec<usize> = if field.is_time_independent() {
        vec![0]
    } else {
        (0..=grid.nt()).collect()
    };
    Field::Sampled(SampledField {
        cells: grid.cells(),
        slices: levels
            .into_iter()
            .map(|n| convolve(grid, &field.sample(grid, n), kern, odd))
            .collect(),
    })
}

/// Replace `a, b, f, u0` by spatial mollifications of radius `width`.
///
/// Coefficients and source are extended evenly across the boundary (constants are
/// reproduced exactly); the initial datum oddly, so its zero trace is kept.
pub fn mollify_coefficients(
    spec: &ProblemSpec,
    width: f64,
) -> Result<(ProblemSpec, MollificationReport), ProblemError> {
    spec.check_fields()?;
    let grid = &spec.grid;
    if !(width > 0.0) {
        return Err(ProblemError::Domain(format!("width = {width} must be positive")));
    }
    let side = grid.lengths()[..grid.dim()].iter().cloned().fold(f64::INFINITY, f64::min);
    if 2.0 * width > side {
        return Err(ProblemError::WidthTooLarge { width, side });
    }
    let kern = kernel(grid, width);
    let before = CoefficientField::from_spec(spec)?;
    let mut out = spec.clone();
    out.a = mollify_field(grid, &spec.a, &kern, false);
    out.b = mollify_field(grid, &spec.b, &kern, false);
    out.f = mollify_field(grid, &spec.f, &kern, false);
    out.u0 = mollify_field(grid, &spec.u0, &kern, true);
    let after = CoefficientField::from_spec(&out)?;
    let report = MollificationReport {
        width,
        grad_a_ld_before: before.grad_a_ld,
        grad_a_ld_after: after.grad_a_ld,
        grad_b_ld_before: before.grad_b_ld,
        grad_b_ld_after: after.grad_b_ld,
        min_sum_after: after.min_sum.0,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn constant_spec(dim: usize, p: f64, q: f64, sigma: f64, r: f64, d: f64) -> ProblemSpec {
        let grid = if dim == 1 {
            Grid::unit_1d(16, 4, 0.1).unwrap()
        } else {
            Grid::unit_2d(8, 4, 0.1).unwrap()
        };
        ProblemSpec {
            grid,
            p: Field::constant(p),
            q: Field::constant(q),
            a: Field::constant(0.5),
            b: Field::constant(0.5),
            f: Field::constant(0.0),
            u0: Field::expr("sin(pi*x)*sin(pi*y)").unwrap(),
            alpha: 1.0,
            sigma,
            r,
            d,
            eps_schedule: vec![0.1, 0.01],
        }
    }

    #[test]
    fn constant_exponent_case_passes() {
        let rep = validate(&constant_spec(2, 2.0, 2.0, 4.0, 2.0, 11.0)).unwrap();
        assert!(rep.accepted, "{rep:?}");
        assert_eq!(rep.get("balance_condition").unwrap().margin, 0.5);
    }

    #[test]
    fn gap_violation_is_named() {
        let rep = validate(&constant_spec(2, 2.0, 2.6, 4.0, 2.6, 40.0)).unwrap();
        assert!(!rep.accepted);
        let bc = rep.get("balance_condition").unwrap();
        assert!(!bc.pass);
        assert!((bc.margin + 0.1).abs() < 1e-12);
    }

    #[test]
    fn r_interval_violation() {
        let rep = validate(&constant_spec(2, 2.0, 2.0, 3.0, 7.0, 40.0)).unwrap();
        let c = rep.get("r_upper_bound").unwrap();
        assert!(!c.pass);
        assert!((c.margin + 1.0).abs() < 1e-12);
    }

    #[test]
    fn coefficient_and_trace_violations() {
        let mut spec = constant_spec(1, 2.0, 2.0, 4.0, 2.0, 11.0);
        spec.a = Field::expr("x - 0.5").unwrap();
        spec.u0 = Field::expr("1 + x").unwrap();
        let rep = validate(&spec).unwrap();
        let names: Vec<_> = rep.violations().map(|c| c.assumption.as_str()).collect();
        assert!(names.contains(&"coefficient_nonnegativity"));
        assert!(names.contains(&"coefficient_lower_bound"));
        assert!(names.contains(&"initial_boundary_trace"));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let mut spec = constant_spec(1, 2.0, 2.0, 4.0, 2.0, 11.0);
        spec.a = Field::Sampled(SampledField {
            cells: [8, 1],
            slices: vec![vec![1.0; 8]],
        });
        assert!(matches!(validate(&spec), Err(ProblemError::GridMismatch { .. })));
    }

    #[test]
    fn validation_is_pure() {
        let spec = constant_spec(2, 2.3, 2.1, 3.0, 2.5, 20.0);
        assert_eq!(validate(&spec).unwrap(), validate(&spec).unwrap());
    }

    #[test]
    fn r_interval_examples() {
        let i = admissible_r_interval(2, 4.0, 2.0, 2.0, 2.0, 2.0).unwrap();
        assert_eq!(i, RInterval { lower: 2.0, upper: f64::INFINITY });
        let i = admissible_r_interval(2, 3.0, 2.0, 2.0, 2.0, 2.0).unwrap();
        assert!((i.upper - 6.0).abs() < 1e-12);
        let i = admissible_r_interval(2, 2.1, 2.0, 2.0, 2.0, 2.0).unwrap();
        assert!((i.upper - 2.0 * 2.1 / 1.9).abs() < 1e-12);
        assert!(admissible_r_interval(2, 2.0, 2.0, 2.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn kappa_supremum_is_the_interval_end() {
        let (n, sigma, m) = (2, 3.0, 2.2);
        let end = admissible_r_interval(n, sigma, m, m, m, m).unwrap().upper;
        let k = r_bound_kappa(n, sigma, m, 0.5 + 1e-9).unwrap();
        assert!((k - end).abs() < 1e-6);
        assert!(r_bound_kappa(n, sigma, m, 0.9).unwrap() < k);
        assert!(r_bound_kappa(n, sigma, m, 0.4).is_err());
    }

    #[test]
    fn mollify_constant_and_tiny_width() {
        let spec = constant_spec(2, 2.0, 2.0, 4.0, 2.0, 11.0);
        let (m, _) = mollify_coefficients(&spec, 0.3).unwrap();
        for v in m.a.sample(&m.grid, 2) {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let (m, _) = mollify_coefficients(&spec, 0.05).unwrap();
        assert_eq!(m.u0.sample(&m.grid, 0), spec.u0.sample(&spec.grid, 0));
        assert!(matches!(
            mollify_coefficients(&spec, 0.6),
            Err(ProblemError::WidthTooLarge { .. })
        ));
    }

    #[test]
    fn mollify_kink_reduces_gradient_norm() {
        let mut spec = constant_spec(1, 2.0, 2.0, 4.0, 2.0, 11.0);
        spec.grid = Grid::unit_1d(200, 2, 0.1).unwrap();
        spec.a = Field::expr("abs(x - 0.5)^0.6").unwrap();
        let (_, rep) = mollify_coefficients(&spec, 0.05).unwrap();
        assert!(rep.grad_a_ld_after <= rep.grad_a_ld_before + 1e-9, "{rep:?}");
    }

    proptest! {
        #[test]
        fn r_interval_monotone_in_sigma(n in 1usize..3, m in 1.5f64..4.0, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
            let nf = n as f64;
            let lo = 2.0 + (nf) * s1.min(s2);
            let hi = 2.0 + (nf) * s1.max(s2);
            let a = admissible_r_interval(n, lo.max(2.0 + 1e-9), m, m, m, m).unwrap();
            let b = admissible_r_interval(n, hi.max(2.0 + 1e-9), m, m, m, m).unwrap();
            prop_assert!(b.upper >= a.upper - 1e-12 * a.upper.abs());
        }

        #[test]
        fn mollify_keeps_sign_and_trace(width in 0.01f64..0.45, shift in 0.0f64..1.0) {
            let mut spec = constant_spec(2, 2.0, 2.0, 4.0, 2.0, 11.0);
            spec.a = Field::expr(&format!("abs(sin(7*x + {shift}))*y")).unwrap();
            let (m, _) = mollify_coefficients(&spec, width).unwrap();
            prop_assert!(m.a.sample(&m.grid, 1).iter().all(|v| *v >= 0.0));
            // odd extension keeps the ghost-average trace at zero; check antisymmetry is used
            let u = m.u0.sample(&m.grid, 0);
            prop_assert!(u.iter().all(|v| v.is_finite()));
        }
    }
}
