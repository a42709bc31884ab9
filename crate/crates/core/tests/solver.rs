use approx::assert_relative_eq;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use dphase::grid::{Grid, GridFunction};
use dphase::harness::MmsCase;
use dphase::linalg::CsrMatrix;
use dphase::problem::{Field, ProblemSpec};
use dphase::solver::{newton_step, solve_evolution, NewtonConfig, StepOperator, TimeStepState};

fn spec(n: usize, p: &str, q: &str, a: &str) -> ProblemSpec {
    let mut s = MmsCase::double_phase().spec(Grid::unit_2d(n, 3, 0.1).unwrap());
    s.p = Field::expr(p).unwrap();
    s.q = Field::expr(q).unwrap();
    s.a = Field::expr(a).unwrap();
    s.b = Field::constant(0.5);
    s.f = Field::constant(1.0);
    s.u0 = Field::expr("sin(pi*x)*sin(pi*y)").unwrap();
    s
}

fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.n, m.n, |i, j| m.get(i, j))
}

fn assembled(op: &StepOperator, grid: &Grid, u: &[f64]) -> DMatrix<f64> {
    let mut m = CsrMatrix::stencil_pattern(grid);
    op.jacobian(u, &mut m).unwrap();
    dense(&m)
}

fn wiggle(n: usize, seed: f64) -> Vec<f64> {
    (0..n).map(|k| ((k as f64 + 1.0) * seed).sin()).collect()
}

#[test]
fn jacobian_is_spd_and_matches_residual_differences() {
    let s = spec(6, "2.6 + 0.4*x", "2.3 + 0.3*y", "max(0, x - 0.3)");
    let grid = s.grid;
    let prev = s.initial_condition().values;
    let op = StepOperator::new(&s, 1, 0.05, &prev);
    let u = wiggle(grid.len(), 0.7);
    let j = assembled(&op, &grid, &u);

    assert_relative_eq!(j.clone(), j.transpose(), epsilon = 1e-12);
    let eig = SymmetricEigen::new(j.clone());
    assert!(eig.eigenvalues.min() >= 1.0 / grid.tau() * (1.0 - 1e-12));

    let h = 1e-6;
    let mut plus = vec![0.0; grid.len()];
    let mut minus = vec![0.0; grid.len()];
    for col in [0, 7, 14, grid.len() - 1] {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[col] += h;
        dn[col] -= h;
        op.residual(&up, &mut plus);
        op.residual(&dn, &mut minus);
        for row in 0..grid.len() {
            let fd = (plus[row] - minus[row]) / (2.0 * h);
            assert_relative_eq!(fd, j[(row, col)], epsilon = 1e-6 * j[(col, col)], max_relative = 1e-6);
        }
    }
}

#[test]
fn newton_step_drives_residual_below_tolerance() {
    let s = spec(10, "3.0", "2.5", "0.5");
    let u0 = s.initial_condition();
    let t1 = s.grid.time(1);
    let guess = GridFunction { time: t1, ..u0.clone() };
    let state = TimeStepState::new(u0, guess, 1, 1e-3);
    let cfg = NewtonConfig::default();
    let state = newton_step(state, &cfg, &s).unwrap();
    assert!(state.final_residual() <= cfg.abs_tol + cfg.rel_tol * state.residual_history[0]);
    assert!(state.residual_history.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn banded_and_cg_agree_in_one_dimension() {
    let mut s = MmsCase::heat().spec(Grid::unit_1d(40, 10, 0.05).unwrap());
    s.p = Field::constant(3.0);
    let banded = NewtonConfig::for_grid(&s.grid);
    let cg = NewtonConfig::default();
    let a = solve_evolution(&s, 1e-2, &banded).unwrap();
    let b = solve_evolution(&s, 1e-2, &cg).unwrap();
    let diff = a.trajectory.last().sub(&b.trajectory.last()).max_abs();
    assert!(diff < 1e-9, "{diff}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jacobian_spd_for_random_data(
        p in 1.3f64..4.0,
        q in 1.3f64..4.0,
        a in 0.0f64..1.0,
        eps in 1e-3f64..0.5,
        seed in 0.1f64..3.0,
    ) {
        let s = spec(5, &p.to_string(), &q.to_string(), &a.to_string());
        let prev = s.initial_condition().values;
        let op = StepOperator::new(&s, 1, eps, &prev);
        let u: Vec<f64> = wiggle(s.grid.len(), seed).iter().map(|v| v * 3.0).collect();
        let j = assembled(&op, &s.grid, &u);
        let eig = SymmetricEigen::new(j.clone());
        prop_assert!((&j - j.transpose()).amax() <= 1e-12 * j.amax());
        prop_assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn solved_steps_satisfy_energy_identity(p in 1.6f64..3.5, q in 1.6f64..3.5, eps in 1e-3f64..0.3) {
        let s = spec(8, &p.to_string(), &q.to_string(), "0.5");
        let cfg = NewtonConfig::default();
        let evo = solve_evolution(&s, eps, &cfg).unwrap();
        for d in &evo.diagnostics {
            prop_assert!(d.energy_residual <= 10.0 * cfg.abs_tol, "{:?}", d);
        }
    }

    #[test]
    fn solution_is_odd_under_sign_flip(eps in 1e-3f64..0.3) {
        let mut s = spec(6, "2.7", "2.2", "0.4");
        let plain = solve_evolution(&s, eps, &NewtonConfig::default()).unwrap();
        s.u0 = Field::expr("-sin(pi*x)*sin(pi*y)").unwrap();
        s.f = Field::constant(-1.0);
        let flipped = solve_evolution(&s, eps, &NewtonConfig::default()).unwrap();
        let sum = plain.trajectory.last().values.iter().zip(&flipped.trajectory.last().values)
            .fold(0.0f64, |m, (x, y)| m.max((x + y).abs()));
        prop_assert!(sum < 1e-8);
    }
}
