import os
import subprocess
import sys

import numpy as np
import pytest

from policyregret import _kernels_py
from policyregret._backend import BACKEND, available_backends
from policyregret.core import RngStream, basis_features, margin_dgp

BACKENDS = available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled backend not built")


def design_inputs(n, seed, n0=50, decay=False):
    spec = margin_dgp(1.0, 0.1)
    gen = RngStream(seed, 0).generator()
    x = gen.random((n, 1))
    u = gen.random(n)
    zp = spec.draw_rewards(spec.q(1.0, x), gen)
    zm = spec.draw_rewards(spec.q(-1.0, x), gen)
    steps = np.arange(1, n + 1, dtype=np.float64)
    t = np.maximum(0.05, 0.5 * steps ** -0.25) if decay else np.full(n, 0.1)
    xi = np.full(n, 0.25)
    return (np.ascontiguousarray(basis_features("interaction", 1.0, x)),
            np.ascontiguousarray(basis_features("interaction", -1.0, x)),
            zp, zm, u, np.ascontiguousarray(spec.p_one(x)), t, xi, n0, 1e-8)


def test_python_backend_always_available():
    assert "python" in BACKENDS and BACKENDS["python"] is _kernels_py
    assert BACKEND in BACKENDS


@needs_cython
@pytest.mark.parametrize("n,seed,decay", [(60, 1, False), (700, 2, False), (700, 3, True), (20, 4, False)])
def test_design_loop_parity(n, seed, decay):
    args = design_inputs(n, seed, decay=decay)
    out_py = _kernels_py.design_loop(*args)
    out_cy = BACKENDS["cython"].design_loop(*args)
    assert out_py[-1] == out_cy[-1]
    for a, b in zip(out_py[:-1], out_cy[:-1]):
        assert np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_threshold_sweep_parity(seed):
    gen = np.random.default_rng(seed)
    xs = np.sort(np.round(gen.random(300), 2))  # rounding creates ties
    diff = gen.normal(size=300)
    for lo, hi in ((0.0, 1.0), (0.2, 0.7), (0.5, 0.5000001)):
        assert _kernels_py.threshold_sweep(xs, diff, 0.3, lo, hi) == \
            BACKENDS["cython"].threshold_sweep(xs, diff, 0.3, lo, hi)


@needs_cython
def test_g_shape_parity():
    cy = BACKENDS["cython"]
    for u in np.linspace(-0.5, 0.5, 1001):
        for t, xi in ((0.1, 0.25), (0.37, 0.013)):
            assert _kernels_py.g_shape(float(u), t, xi) == cy.g_shape(float(u), t, xi)


def test_threshold_sweep_brute_force():
    gen = np.random.default_rng(9)
    xs = np.sort(np.round(gen.random(80), 1))
    diff = gen.normal(size=80)
    tau, best = _kernels_py.threshold_sweep(xs, diff, 0.0, 0.15, 0.85)
    cands = [0.15] + sorted({float(x) for x in xs if 0.15 < x <= 0.85})
    sums = [float(np.sum(diff[xs <= c])) for c in cands]
    assert best == pytest.approx(max(sums), abs=1e-12)
    assert tau == cands[int(np.argmax(np.array(sums) >= max(sums) - 1e-12))]


@pytest.mark.parametrize("choice", ["python", "cython"])
def test_env_var_selects_backend(choice):
    if choice == "cython" and "cython" not in BACKENDS:
        pytest.skip("compiled backend not built")
    env = dict(os.environ, POLICYREGRET_BACKEND=choice)
    out = subprocess.run([sys.executable, "-c", "from policyregret import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == choice
