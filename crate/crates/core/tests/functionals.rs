use std::path::PathBuf;

use approx::assert_relative_eq;
use proptest::prelude::*;

use dphase::config::RunConfig;
use dphase::grid::{Grid, GridFunction};
use dphase::harness::{check_r, default_s_list, regularity_report, HarnessError};
use dphase::problem::validate;
use dphase::solver::solve_evolution;
use dphase::varexp::{luxemburg_norm, modular, DEFAULT_LUXEMBURG_TOL};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn fixtures_validate_as_documented() {
    for (name, accepted) in [
        ("heat.toml", true),
        ("double_phase.toml", true),
        ("variable_exponents.toml", true),
        ("kink.toml", true),
        ("stalled.toml", true),
        ("zero.toml", true),
        ("balance_violation.toml", false),
        ("inadmissible_r.toml", false),
    ] {
        let cfg = RunConfig::load(&fixtures().join(name)).unwrap();
        assert_eq!(validate(&cfg.spec).unwrap().accepted, accepted, "{name}");
    }
}

#[test]
fn report_rejects_r_outside_interval() {
    let cfg = RunConfig::load(&fixtures().join("inadmissible_r.toml")).unwrap();
    assert!(matches!(check_r(&cfg.spec, cfg.spec.r), Err(HarnessError::InadmissibleR { .. })));
}

#[test]
fn report_is_finite_and_consistent() {
    let cfg = RunConfig::load(&fixtures().join("variable_exponents.toml")).unwrap();
    let eps = cfg.final_eps();
    let evo = solve_evolution(&cfg.spec, eps, &cfg.newton).unwrap();
    let rep = regularity_report(&evo.trajectory, &cfg.spec, eps, cfg.spec.r, &default_s_list(2)).unwrap();
    assert!(rep.is_finite_nonnegative());
    assert!(rep.sup_r_norm >= rep.initial_r_norm);
    assert_relative_eq!(rep.energy_residual_max, evo.energy_residual_max());
}

proptest! {
    #[test]
    fn luxemburg_is_homogeneous(
        values in proptest::collection::vec(-5.0f64..5.0, 12),
        exps in proptest::collection::vec(1.1f64..5.0, 12),
        lambda in -4.0f64..4.0,
    ) {
        prop_assume!(values.iter().any(|v| v.abs() > 1e-3) && lambda.abs() > 1e-2);
        let g = Grid::unit_1d(12, 1, 1.0).unwrap();
        let v = GridFunction::from_values(g, 0.0, values).unwrap();
        let n = luxemburg_norm(&v, &exps, DEFAULT_LUXEMBURG_TOL).unwrap();
        let m = luxemburg_norm(&v.scaled(lambda), &exps, DEFAULT_LUXEMBURG_TOL).unwrap();
        prop_assert!((m - lambda.abs() * n).abs() <= 1e-8 * m);
        prop_assert!((modular(&v.scaled(1.0 / n), &exps).unwrap().value - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn luxemburg_triangle_inequality(
        a in proptest::collection::vec(-3.0f64..3.0, 10),
        b in proptest::collection::vec(-3.0f64..3.0, 10),
        exps in proptest::collection::vec(1.0f64..4.0, 10),
    ) {
        let g = Grid::unit_1d(10, 1, 1.0).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let norm = |v: Vec<f64>| luxemburg_norm(&GridFunction::from_values(g, 0.0, v).unwrap(), &exps, DEFAULT_LUXEMBURG_TOL).unwrap();
        let (na, nb, ns) = (norm(a), norm(b), norm(sum));
        prop_assert!(ns <= (na + nb) * (1.0 + 1e-8) + 1e-12);
    }
}
