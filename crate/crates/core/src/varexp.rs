//! Variable-exponent modulars, Luxemburg norms, and the monotonicity functionals used to
//! certify that families of discrete solutions are Cauchy.
//!
//! All integrals use cell-centre (midpoint) quadrature. Gradient densities are averaged
//! over the staggered face-difference pairs of each cell (see [`Grid::quadrants`]), which
//! is the same quadrature the solver's discrete energy uses. Space-time integrals sum the
//! time levels `1..=nt` with weight `τ`, the right-endpoint rule of backward Euler.

use serde::Serialize;
use thiserror::Error;

use crate::flux::{flux_value, FluxPoint};
use crate::grid::{Grid, GridError, GridFunction, Trajectory};
use crate::problem::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarexpError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Modular {
    pub value: f64,
    pub exponent_min: f64,
    pub exponent_max: f64,
}

fn check_len(v: &GridFunction, exponent: &[f64]) -> Result<(), VarexpError> {
    if exponent.len() != v.grid.len() || v.values.len() != v.grid.len() {
        return Err(VarexpError::GridMismatch(format!(
            "{} values, {} exponents, {} cells",
            v.values.len(),
            exponent.len(),
            v.grid.len()
        )));
    }
    Ok(())
}

fn scaled_modular(v: &GridFunction, exponent: &[f64], lambda: f64) -> f64 {
    v.grid.cell_volume()
        * v.values
            .iter()
            .zip(exponent)
            .map(|(x, p)| (x.abs() / lambda).powf(*p))
            .sum::<f64>()
}

/// `∫_Ω |v|^{p(x)} dx` by the midpoint rule.
pub fn modular(v: &GridFunction, exponent: &[f64]) -> Result<Modular, VarexpError> {
    check_len(v, exponent)?;
    let (lo, hi) = exponent
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(*p), b.max(*p)));
    Ok(Modular {
        value: scaled_modular(v, exponent, 1.0),
        exponent_min: lo,
        exponent_max: hi,
    })
}

pub const DEFAULT_LUXEMBURG_TOL: f64 = 1e-10;
const MAX_BISECTION: usize = 200;

/// `inf{λ > 0 : ∫|v/λ|^{p(x)} ≤ 1}` by bisection on `ln λ`.
///
/// The modular of `v/λ` is strictly decreasing in `λ`, and for `ρ = ∫|v|^p` the root is
/// bracketed by `ρ^{1/p⁺}` and `ρ^{1/p⁻}`. Iteration stops once `|ρ(v/λ) − 1| ≤ tol`.
pub fn luxemburg_norm(v: &GridFunction, exponent: &[f64], tol: f64) -> Result<f64, VarexpError> {
    let m = modular(v, exponent)?;
    if m.value == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = (m.value.powf(1.0 / m.exponent_max), m.value.powf(1.0 / m.exponent_min));
    let (mut lo, mut hi) = (a.min(b) * (1.0 - 1e-12), a.max(b) * (1.0 + 1e-12));
    for _ in 0..MAX_BISECTION {
        let mid = (lo * hi).sqrt();
        let g = scaled_modular(v, exponent, mid) - 1.0;
        if g.abs() <= tol {
            return Ok(mid);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 <= f64::EPSILON {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Mean of `density(ξ)` over the staggered gradient samples of one cell.
#[inline]
pub fn cell_gradient_mean(grid: &Grid, values: &[f64], cell: usize, mut density: impl FnMut([f64; 2]) -> f64) -> f64 {
    let (xs, n) = grid.quadrants(cell).gradients(values);
    xs[..n].iter().map(|x| density(*x)).sum::<f64>() / n as f64
}

/// `∫_Ω g(x, ∇v) dx` with the staggered-pair quadrature.
pub fn gradient_integral(grid: &Grid, values: &[f64], mut density: impl FnMut(usize, [f64; 2]) -> f64) -> f64 {
    let vol = grid.cell_volume();
    (0..grid.len())
        .map(|c| vol * cell_gradient_mean(grid, values, c, |xi| density(c, xi)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceMetrics {
    /// `∫_{Q_T} (F_ε(∇u)∇u − F_ε(∇v)∇v)·∇(u − v)`.
    pub g_eps: f64,
    /// `∫_{Q_T} a|∇(u−v)|^p + b|∇(u−v)|^q`.
    pub n_modular: f64,
    /// `∫_{Q_T} |∇(u−v)|^{min(p,q)}`.
    pub s_under_modular: f64,
}

fn norm(x: [f64; 2]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// Monotonicity functional and difference modulars between two solutions over `Q_T`.
pub fn convergence_metrics(
    u: &Trajectory,
    v: &Trajectory,
    spec: &ProblemSpec,
    eps: f64,
) -> Result<ConvergenceMetrics, VarexpError> {
    u.check_same_shape(v)?;
    u.grid.check_same_shape(&spec.grid)?;
    let grid = &u.grid;
    let tau = grid.tau();
    let mut out = ConvergenceMetrics {
        g_eps: 0.0,
        n_modular: 0.0,
        s_under_modular: 0.0,
    };
    let diff: Vec<Vec<f64>> = u
        .slices
        .iter()
        .zip(&v.slices)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    for n in 1..u.slices.len() {
        let data = spec.level(n);
        let (us, vs, ds) = (&u.slices[n], &v.slices[n], &diff[n]);
        let mut g = 0.0;
        let mut nm = 0.0;
        let mut sm = 0.0;
        for c in 0..grid.len() {
            let fp = FluxPoint::new(data.p[c], data.q[c], data.a[c], data.b[c], eps);
            let s_under = data.p[c].min(data.q[c]);
            let quads = grid.quadrants(c);
            let (xu, k) = quads.gradients(us);
            let (xv, _) = quads.gradients(vs);
            let (xd, _) = quads.gradients(ds);
            let (mut gc, mut nc, mut sc) = (0.0, 0.0, 0.0);
            for q in 0..k {
                let (fu, _) = flux_value(&fp, &xu[q]);
                let (fv, _) = flux_value(&fp, &xv[q]);
                let d = xd[q];
                gc += (fu[0] - fv[0]) * d[0] + (fu[1] - fv[1]) * d[1];
                let nd = norm(d);
                nc += data.a[c] * nd.powf(data.p[c]) + data.b[c] * nd.powf(data.q[c]);
                sc += nd.powf(s_under);
            }
            g += gc / k as f64;
            nm += nc / k as f64;
            sm += sc / k as f64;
        }
        let w = grid.cell_volume() * tau;
        out.g_eps += w * g;
        out.n_modular += w * nm;
        out.s_under_modular += w * sm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Field;
    use proptest::prelude::*;

    fn line(n: usize, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_fn(Grid::unit_1d(n, 1, 1.0).unwrap(), 0.0, |x, _| f(x))
    }

    #[test]
    fn modular_examples() {
        let v = line(16, |_| 1.7);
        let m = modular(&v, &[2.5; 16]).unwrap();
        assert!((m.value - 1.7f64.powf(2.5)).abs() < 1e-13);
        assert_eq!(modular(&line(16, |_| 0.0), &[3.0; 16]).unwrap().value, 0.0);
        let m = modular(&line(1024, |x| x), &vec![2.0; 1024]).unwrap();
        assert!((m.value - 1.0 / 3.0).abs() < 1e-5);
        assert!(modular(&line(16, |x| x), &[2.0; 15]).is_err());
    }

    #[test]
    fn luxemburg_examples() {
        let v = line(64, |x| (3.0 * x).sin() + 0.2);
        let p0 = 3.0;
        let closed: f64 = (v.grid.cell_volume() * v.values.iter().map(|x| x.abs().powf(p0)).sum::<f64>()).powf(1.0 / p0);
        let lx = luxemburg_norm(&v, &[p0; 64], 1e-12).unwrap();
        assert!((lx - closed).abs() < 1e-10 * closed);
        let exps: Vec<f64> = (0..64).map(|k| 1.5 + k as f64 / 30.0).collect();
        let one = line(64, |_| 1.0);
        assert!((luxemburg_norm(&one, &exps, 1e-12).unwrap() - 1.0).abs() < 1e-10);
        let tol = 1e-10;
        let n1 = luxemburg_norm(&v, &exps, tol).unwrap();
        let n2 = luxemburg_norm(&v.scaled(-3.5), &exps, tol).unwrap();
        assert!((n2 - 3.5 * n1).abs() <= 2.0 * tol * n2.max(1.0));
        assert_eq!(luxemburg_norm(&line(8, |_| 0.0), &[2.0; 8], tol).unwrap(), 0.0);
    }

    #[test]
    fn midpoint_quadrature_is_second_order() {
        let m = |n: usize| {
            let v = line(n, |x| x * (1.0 - x) + 0.1);
            let exps: Vec<f64> = (0..n).map(|c| 2.0 + 0.5 * v.grid.center(c)[0]).collect();
            modular(&v, &exps).unwrap().value
        };
        let (a, b, c) = (m(16), m(32), m(64));
        assert!(((a - b) / (b - c)).log2() >= 1.9);
    }

    fn spec_1d(n: usize, nt: usize) -> ProblemSpec {
        ProblemSpec {
            grid: Grid::unit_1d(n, nt, 0.1).unwrap(),
            p: Field::constant(2.0),
            q: Field::constant(2.0),
            a: Field::constant(0.5),
            b: Field::constant(0.5),
            f: Field::constant(0.0),
            u0: Field::constant(0.0),
            alpha: 1.0,
            sigma: 4.0,
            r: 2.0,
            d: 20.0,
            eps_schedule: vec![0.1],
        }
    }

    fn traj(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Trajectory {
        let slices = (0..=grid.nt())
            .map(|n| (0..grid.len()).map(|c| f(grid.center(c)[0], grid.time(n))).collect())
            .collect();
        Trajectory::new(grid, slices).unwrap()
    }

    #[test]
    fn metrics_vanish_for_equal_arguments() {
        let spec = spec_1d(16, 3);
        let u = traj(spec.grid, |x, t| (x * 3.0).sin() * (1.0 + t));
        let m = convergence_metrics(&u, &u, &spec, 0.1).unwrap();
        assert_eq!((m.g_eps, m.n_modular, m.s_under_modular), (0.0, 0.0, 0.0));
    }

    #[test]
    fn linear_case_collapses_all_three() {
        let spec = spec_1d(16, 3);
        let u = traj(spec.grid, |x, t| (x * 3.0).sin() * (1.0 + t));
        let v = traj(spec.grid, |x, t| x * x * (1.0 - t));
        let m = convergence_metrics(&u, &v, &spec, 0.0).unwrap();
        assert!((m.g_eps - m.n_modular).abs() < 1e-12 * m.g_eps);
        assert!((m.g_eps - m.s_under_modular).abs() < 1e-12 * m.g_eps);
    }

    proptest! {
        #[test]
        fn unit_ball_and_monotonicity(c0 in 0.1f64..3.0, c1 in -2.0f64..2.0, pmin in 1.2f64..3.0, spread in 0.0f64..2.0, shrink in 0.0f64..1.0) {
            let n = 32;
            let v = line(n, |x| c0 * (1.0 + c1 * x).sin() + 0.05);
            let exps: Vec<f64> = (0..n).map(|k| pmin + spread * (k as f64 / n as f64)).collect();
            let norm_v = luxemburg_norm(&v, &exps, 1e-11).unwrap();
            let unit = modular(&v.scaled(1.0 / norm_v), &exps).unwrap().value;
            prop_assert!((unit - 1.0).abs() <= 1e-9);
            let w = v.scaled(shrink);
            prop_assert!(luxemburg_norm(&w, &exps, 1e-11).unwrap() <= norm_v * (1.0 + 1e-9));
        }

        #[test]
        fn g_eps_is_symmetric(p in 1.3f64..4.0, q in 1.3f64..4.0, eps in 0.0f64..0.5, k in 1.0f64..5.0) {
            let mut spec = spec_1d(12, 2);
            spec.p = Field::constant(p);
            spec.q = Field::constant(q);
            let u = traj(spec.grid, |x, t| (k * x).sin() * (1.0 + t));
            let v = traj(spec.grid, |x, _| x * (1.0 - x));
            let a = convergence_metrics(&u, &v, &spec, eps).unwrap();
            let b = convergence_metrics(&v, &u, &spec, eps).unwrap();
            prop_assert_eq!(a.g_eps, b.g_eps);
            prop_assert!(a.g_eps >= 0.0);
        }
    }
}
