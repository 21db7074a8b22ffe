import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rating_forge import _fallback, kernels

compiled = pytest.importorskip("rating_forge._kernels")

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, st.floats(1e-3, 10.0)), min_size=1, max_size=60))
def test_pav_backends_agree(pairs):
    y = np.array([p[0] for p in pairs])
    w = np.array([p[1] for p in pairs])
    np.testing.assert_allclose(compiled.pav(y, w), _fallback.pav(y, w), rtol=1e-12, atol=1e-9)


@given(st.integers(1, 40), st.integers(0, 10_000))
def test_partition_dp_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 1.0, n)
    x = np.sort(rng.uniform(0, 1, n))
    sg = np.concatenate([[0.0], np.cumsum(g * h)])
    sx = np.concatenate([[0.0], np.cumsum(x * h)])
    sh = np.concatenate([[0.0], np.cumsum(h)])
    v1, p1 = compiled.partition_dp(sg, sx, sh)
    v2, p2 = _fallback.partition_dp(sg, sx, sh)
    assert v1 == pytest.approx(v2, abs=1e-12)
    np.testing.assert_array_equal(np.asarray(p1), np.asarray(p2))


@given(st.integers(1, 30), st.integers(0, 10_000))
def test_max_ic_violation_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    payoff = rng.normal(size=(n, n))
    a = compiled.max_ic_violation(payoff)
    b = _fallback.max_ic_violation(payoff)
    assert a[0] == pytest.approx(b[0], abs=1e-15)
    assert tuple(a[1:]) == tuple(b[1:])


def test_max_ic_violation_is_row_gain():
    payoff = np.array([[1.0, 3.0], [2.0, 2.5]])
    gain, i, j = _fallback.max_ic_violation(payoff)
    assert (gain, i, j) == (2.0, 0, 1)


def test_backend_selected_at_import():
    assert kernels.BACKEND == "cython"


def test_pure_env_forces_fallback():
    env = dict(os.environ, RATING_FORGE_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from rating_forge import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
