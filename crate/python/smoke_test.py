"""Build the extension, import it, and exercise the main entry points.

    python3 python/smoke_test.py            # builds with cargo first
    python3 python/smoke_test.py --no-build # reuse target/release
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

HEAT = """
dim = 1
nx = 32
nt = 20
T = 0.05
p = 2.0
q = 2.0
a = 0.5
b = 0.5
f = 0.0
u0.expr = "sin(pi*x)"
alpha = 1.0
sigma = 8.0
r = 2.0
d = 20.0
eps.schedule = [0.1]
seed = 1
"""


def build_and_load():
    if "--no-build" not in sys.argv:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "dphase-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
    lib = ROOT / "target" / "release" / "libdphase_py.so"
    dest = Path(tempfile.mkdtemp()) / "dphase_py.so"
    shutil.copy(lib, dest)
    sys.path.insert(0, str(dest.parent))
    import dphase_py

    return dphase_py


def main():
    dp = build_and_load()

    fp = dp.FluxPoint(3.0, 2.5, 0.5, 0.5, 0.1)
    v = fp.value([0.3, -0.4])
    w = 0.1**2 + 0.25
    expected = (0.6 * w**0.5 + 0.6 * w**0.25) * 0.3
    assert abs(v[0] - expected) < 1e-14, (v, expected)
    jac = fp.jacobian([0.3, -0.4])
    assert jac[0][1] == jac[1][0]
    assert fp.monotonicity_gap([1.0, 0.0], [0.0, 1.0]) > 0.0

    lhs, rhs = dp.hessian_quadratic_form([[1.0, 2.0], [2.0, -3.0]], [0.6, 0.0], 1.5, 3.0)
    assert lhs >= rhs

    lo, hi = dp.admissible_r_interval(2, 3.0, 2.0, 2.0, 2.0, 2.0)
    assert (lo, hi) == (2.0, 6.0), (lo, hi)
    assert math.isinf(dp.admissible_r_interval(2, 5.0, 2.0, 2.0, 2.0, 2.0)[1])

    norm = dp.luxemburg_norm_1d([2.0] * 16, [3.0] * 16)
    assert abs(norm - 2.0) < 1e-9

    report = json.loads(dp.validate_config(HEAT))
    assert report["accepted"], report

    sol = dp.solve(HEAT, eps=0.0)
    assert sol.nt == 20 and sol.cells == (32, 1)
    xs = [c[0] for c in sol.centers()]
    err = max(abs(u - math.sin(math.pi * x) * math.exp(-math.pi**2 * 0.05)) for u, x in zip(sol.slice(20), xs))
    assert err < 5e-3, err
    assert sol.energy_residual_max < 1e-8
    rep = json.loads(sol.report())
    assert rep["sup_r_norm"] == rep["initial_r_norm"]

    rows = dp.mms_study("heat", [16, 32])
    assert rows[1][2] > 1.8, rows

    try:
        dp.FluxPoint(3.0, 2.5, -1.0, 0.5, 0.1)
    except ValueError:
        pass
    else:
        raise AssertionError("negative coefficient accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
