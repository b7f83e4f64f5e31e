"""Smoke test for the `rieszdual` extension module.

Build and run from the workspace root:

    cargo build --release -p rieszdual-py --features extension-module
    cp target/release/librieszdual_py.so python/rieszdual.so
    python3 python/smoke_test.py
"""

import math
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import rieszdual as rd


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    value, tail, _ = rd.compute_w(2.0, 1)
    close(value, math.pi ** 2 / 3 - 1, 1e-10)
    assert tail >= 0.0

    d = rd.theoretical_d(1.0, 0.5, 5.0, 2, 1, 1.0)
    assert d > 0.0
    try:
        rd.theoretical_d(1.0, 0.5, 3.0, 2, 1, 1.0)
    except ValueError as e:
        assert "s > d+t" in str(e), e
    else:
        raise AssertionError("boundary decay accepted")

    ind = rd.Basis("bspline-indicator", 1, 6, claimed_s=5.0)
    assert len(ind) == 13
    m = ind.gramian(1 / 32)
    rows = m.entries()
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            close(v, 1.0 if i == j else 0.0, 1e-12)
    a, b = m.riesz_bounds([3, 6])
    close(a, 1.0, 1e-12)
    close(b, 1.0, 1e-12)

    bump = rd.Basis("polynomial-bump", 1, 8, param=5.0)
    g = bump.gramian(1 / 32)
    assert g.is_symmetric()
    assert g.schur_bound() >= g.spectral_norm() * (1 - 1e-12)
    dual = rd.DualSystem(g, [4, 6, 8], 1e-6)
    assert dual.core_radius >= 1
    g0 = dual.dual(bump, [0], 1 / 32)
    h = 1 / 32
    f0 = [bump.evaluate([0], [-16 + i * h]) for i in range(len(g0))]
    close(h * sum(x * y for x, y in zip(g0, f0)), 1.0, 1e-6)

    rng = random.Random(5)
    n = 9
    def sym():
        raw = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(n)]
        return rd.Gramian.from_rows(1, 4, [[0.5 * (raw[i][j] + raw[j][i]) for j in range(n)] for i in range(n)])
    assert rd.leibniz_check(sym(), sym(), 0) < 1e-12

    summary = rd.analyze("bspline-indicator", 1, 8, claimed_s=5.0, h=1 / 32)
    close(summary["a_est"], 1.0, 1e-12)
    assert summary["biorthogonality"] < 1e-12
    print("smoke test passed:", sorted(rd.FAMILIES))


if __name__ == "__main__":
    main()
