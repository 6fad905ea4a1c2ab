import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resetband import _backend, _kernels_py

try:
    from resetband import _kernels as _kernels_c
except ImportError:  # pragma: no cover - extension not built
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def _stable(rng, n):
    # contractive random map
    A = rng.normal(size=(n, n))
    return np.ascontiguousarray(0.95 * A / max(1.0, np.max(np.abs(np.linalg.eigvals(A)))))


def test_default_backend_is_compiled_when_built():
    if _kernels_c is not None and not os.environ.get("RESETBAND_PURE_PYTHON"):
        assert _backend.BACKEND == "cython"
    else:
        assert _backend.BACKEND == "python"


def test_env_var_forces_python():
    env = dict(os.environ, RESETBAND_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c",
                          "from resetband import _backend; print(_backend.BACKEND)"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert res.stdout.strip() == "python"


@needs_ext
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_open_loop_parity(seed, n):
    rng = np.random.default_rng(seed)
    Phi = _stable(rng, n)
    G0, G1, C = (np.ascontiguousarray(rng.normal(size=n)) for _ in range(3))
    rho = np.ascontiguousarray(rng.uniform(-1, 1, size=n))
    u = np.ascontiguousarray(np.sin(np.linspace(0, 20, 801)) + 0.1 * rng.normal(size=801))
    trig = np.ascontiguousarray(u[:-1])
    a = _kernels_py.open_loop(Phi, G0, G1, C, 0.3, rho, u, trig)
    b = _kernels_c.open_loop(Phi, G0, G1, C, 0.3, rho, u, trig)
    for x, y in zip(a, b):
        np.testing.assert_allclose(np.asarray(y), np.asarray(x), rtol=1e-12, atol=1e-13)


@needs_ext
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_closed_loop_parity(seed, nc, npl):
    rng = np.random.default_rng(seed)
    Ac, Ap = _stable(rng, nc), _stable(rng, npl)
    Bc, Cc = (np.ascontiguousarray(0.1 * rng.normal(size=nc)) for _ in range(2))
    Bp, Cp = (np.ascontiguousarray(0.1 * rng.normal(size=npl)) for _ in range(2))
    rho = np.ascontiguousarray(rng.uniform(-1, 1, size=nc))
    r = np.ascontiguousarray(np.sin(np.linspace(0, 30, 1001)))
    a = _kernels_py.closed_loop(Ac, Bc, Cc, 0.05, rho, Ap, Bp, Cp, r, 1e6)
    b = _kernels_c.closed_loop(Ac, Bc, Cc, 0.05, rho, Ap, Bp, Cp, r, 1e6)
    for x, y in zip(a[:4], b[:4]):
        np.testing.assert_allclose(np.asarray(y), np.asarray(x), rtol=1e-12, atol=1e-13)
    assert a[4] == b[4]


@needs_ext
def test_closed_loop_divergence_index_parity():
    Ac = np.array([[1.05]])
    one = np.ones(1)
    r = np.ones(500)
    a = _kernels_py.closed_loop(Ac, one, one, 0.0, one, Ac, one, one, r, 100.0)
    b = _kernels_c.closed_loop(Ac, one, one, 0.0, one, Ac, one, one, r, 100.0)
    assert a[4] == b[4] >= 0
