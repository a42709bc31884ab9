use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    Python::initialize();
    Python::attach(|py| {
        let module = wrap_pymodule!(dphase_py::dphase_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("dp", module).unwrap();
        f(py, &globals)
    })
}

fn eval(py: Python<'_>, globals: &Bound<'_, PyDict>, code: &str) {
    let code = std::ffi::CString::new(code).unwrap();
    py.run(&code, Some(globals), None)
        .unwrap_or_else(|e| panic!("{e}"));
}

#[test]
fn flux_and_bounds_from_python() {
    with_module(|py, g| {
        eval(
            py,
            g,
            r#"
fp = dp.FluxPoint(2.0, 2.0, 0.5, 0.5, 0.0)
assert fp.value([0.5, -1.0]) == [0.5, -1.0]
assert fp.jacobian([0.1, 0.2]) == [[1.0, 0.0], [0.0, 1.0]]
lo, hi, up = dp.FluxPoint(3.0, 2.5, 0.5, 0.5, 0.2).null_eps_bound([0.3, 0.1], 0.5, 0.5)
assert lo <= hi <= up
lhs, rhs = dp.log_power_bound(0.5, 1.0, 0.5)
assert lhs <= rhs
lo, hi = dp.admissible_r_interval(2, 3.0, 2.2, 2.2, 2.2, 2.2)
assert lo == 2.2 and hi > lo
"#,
        );
    });
}

#[test]
fn errors_become_value_errors() {
    with_module(|py, g| {
        eval(
            py,
            g,
            r#"
for call in (
    lambda: dp.FluxPoint(3.0, 3.0, 0.5, 0.5, 0.0).jacobian([0.0, 0.0, 0.0, 0.0]),
    lambda: dp.hessian_quadratic_form([[1.0, 0.0], [0.0, 1.0]], [2.0, 0.0], 2.0, 2.0),
    lambda: dp.validate_config("dim = "),
    lambda: dp.luxemburg_norm_1d([1.0] * 8, [2.0] * 7),
):
    try:
        call()
    except ValueError:
        pass
    else:
        raise AssertionError("no error")
"#,
        );
    });
}

#[test]
fn solve_and_report_round_trip() {
    with_module(|py, g| {
        eval(
            py,
            g,
            r#"
import json
cfg = '''
dim = 2
nx = 8
nt = 2
T = 0.1
p = 3.0
q = 2.8
a = 0.5
b = 0.5
f = 1.0
u0.expr = "sin(pi*x)*sin(pi*y)"
alpha = 1.0
sigma = 8.0
r = 3.0
d = 20.0
eps.schedule = [0.1, 0.01]
seed = 3
'''
assert json.loads(dp.validate_config(cfg))["accepted"]
sol = dp.solve(cfg)
assert sol.eps == 0.01 and sol.nt == 2 and len(sol.slice(2)) == 64
rep = json.loads(sol.report(s_list=[0.5]))
assert rep["energy_residual_max"] < 1e-8
assert len(rep["improved_modular"]) == 1
try:
    sol.report(r=1.0)
except ValueError as e:
    assert "admissible" in str(e)
else:
    raise AssertionError("inadmissible r accepted")
"#,
        );
    });
}
