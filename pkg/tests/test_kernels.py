import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scfde_txbf import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")

KINDS = [kernels.AMSE, kernels.GMSE, kernels.ASINR, kernels.GSINR]


def conv_oracle(x, taps, cp_len):
    # cyclic prefix, then a full linear convolution per (rx, tx) pair via np.convolve
    nb, nc, nt = x.shape
    xc = np.concatenate([x[:, nc - cp_len:], x], axis=1)
    out = np.zeros((nb, nc + cp_len, taps.shape[1]), dtype=complex)
    for b in range(nb):
        for r in range(taps.shape[1]):
            for t in range(nt):
                out[b, :, r] += np.convolve(xc[b, :, t], taps[:, r, t])[:nc + cp_len]
    return out


@given(seed=st.integers(0, 2 ** 31), lam=st.floats(1e-3, 5.0))
def test_waterfill_backends_agree(seed, lam):
    r = np.random.default_rng(seed)
    a = r.exponential(size=(7, 3))
    a[0, 0] = 0.0
    b = r.exponential(size=3) + 0.05
    np.testing.assert_allclose(kernels.NUMBA["waterfill"](lam, b, a),
                               kernels.NUMPY["waterfill"](lam, b, a), rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(4))
def test_inner_solve_backends_agree(kind, seed):
    r = np.random.default_rng(seed)
    a = r.exponential(size=(16, 2)) * 5
    lam = 0.05 * (seed + 1)
    if kind == kernels.ASINR:
        lam = max(lam, 1.5 * kernels.asinr_critical_lambda(a).max())
    b0 = np.full(2, 0.5)
    p1, b1, it1, st1 = kernels.NUMPY["inner_solve"](kind, lam, a, 1.0, b0, 0.5, 200, 1e-13)
    p2, b2, it2, st2 = kernels.NUMBA["inner_solve"](kind, lam, a, 1.0, b0, 0.5, 200, 1e-13)
    np.testing.assert_allclose(p1, p2, rtol=1e-10, atol=1e-13)
    np.testing.assert_array_equal(st1, st2)


@pytest.mark.parametrize("impl", ["NUMPY", "NUMBA"])
def test_asinr_unbounded_below_critical(impl):
    a = np.random.default_rng(1).exponential(size=(8, 2)) * 3
    crit = kernels.asinr_critical_lambda(a)
    solve = getattr(kernels, impl)["inner_solve"]
    _, _, _, status = solve(kernels.ASINR, 0.99 * crit.min(), a, 1.0, np.ones(2), 0.5, 200, 1e-13)
    assert np.all(status == kernels.UNBOUNDED)
    p, _, _, status = solve(kernels.ASINR, 1.01 * crit.max(), a, 1.0, np.ones(2), 0.5, 200, 1e-13)
    assert np.all(status < kernels.UNBOUNDED) and np.all(np.isfinite(p))


@pytest.mark.parametrize("impl", ["NUMPY", "NUMBA"])
def test_fixed_point_is_a_fixed_point(impl):
    # at convergence B reproduces itself through b(P(B))
    a = np.random.default_rng(3).exponential(size=(16, 2)) * 4
    p, b, _, status = getattr(kernels, impl)["inner_solve"](kernels.GMSE, 0.1, a, 1.0,
                                                            np.ones(2), 0.5, 200, 1e-13)
    assert np.all(status <= kernels.BRACKETED)
    mse = np.mean(1.0 / (1.0 + a * p), axis=0)
    np.testing.assert_allclose(b, 1.0 / (np.log(2) * mse), rtol=1e-10)


@pytest.mark.parametrize("impl", ["NUMPY", "NUMBA"])
@pytest.mark.parametrize("shape", [(1, 4, 1, 1, 1, 1), (3, 16, 2, 3, 4, 4), (2, 8, 2, 2, 8, 8)])
def test_convolve_matches_oracle(impl, shape):
    nb, nc, nt, nr, ntaps, cp = shape
    r = np.random.default_rng(nc)
    x = r.standard_normal((nb, nc, nt)) + 1j * r.standard_normal((nb, nc, nt))
    taps = r.standard_normal((ntaps, nr, nt)) + 1j * r.standard_normal((ntaps, nr, nt))
    np.testing.assert_allclose(getattr(kernels, impl)["channel_convolve"](x, taps, cp),
                               conv_oracle(x, taps, cp), atol=1e-12)


def test_env_flag_selects_numpy():
    code = "from scfde_txbf import _accel; print(_accel.backend_name())"
    env = dict(os.environ, SCFDE_TXBF_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "numpy"
    env["SCFDE_TXBF_NO_NUMBA"] = ""
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "numba"


def test_dispatch_follows_flag(monkeypatch):
    a = np.ones((2, 1))
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    assert kernels._pick("waterfill") is kernels.NUMPY["waterfill"]
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    assert kernels._pick("waterfill") is kernels.NUMBA["waterfill"]
    np.testing.assert_allclose(kernels.waterfill(0.25, [1.0], a), [[1.0], [1.0]])
