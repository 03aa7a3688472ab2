import os
import subprocess
import sys

import numpy as np
import pytest

from sao import _kernels_py as ref
from sao import kernels

fast = pytest.importorskip("sao._kernels_c", reason="compiled extension not built")

# the float32 C loops use a rational tanh approximation (abs error ~1e-6)
TOL = {np.float32: dict(rtol=2e-5, atol=1e-5), np.float64: dict(rtol=1e-12, atol=1e-13)}
DTYPES = [np.float32, np.float64]


@pytest.mark.parametrize("dtype", DTYPES)
def test_gelu(dtype):
    rng = np.random.default_rng(0)
    x = (rng.normal(size=(37, 11)) * 3).astype(dtype)
    x[0, :4] = [0.0, 9.0, -9.0, 30.0]
    out_f, cache_f = fast.gelu_forward(x)
    out_r, cache_r = ref.gelu_forward(x)
    np.testing.assert_allclose(out_f, out_r, **TOL[dtype])
    g = rng.normal(size=x.shape).astype(dtype)
    np.testing.assert_allclose(fast.gelu_backward(cache_f, g), ref.gelu_backward(cache_r, g), **TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
def test_pair_hidden(dtype):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(9, 6)).astype(dtype), rng.normal(size=(7, 6)).astype(dtype)
    bias = rng.normal(size=6).astype(dtype)
    out_f, cache_f = fast.pair_hidden_forward(a, b, bias)
    out_r, cache_r = ref.pair_hidden_forward(a, b, bias)
    assert out_f.dtype == dtype
    np.testing.assert_allclose(out_f, out_r, **TOL[dtype])
    g = rng.normal(size=out_r.shape).astype(dtype)
    for x, y in zip(fast.pair_hidden_backward(cache_f, g), ref.pair_hidden_backward(cache_r, g)):
        np.testing.assert_allclose(x, y, rtol=TOL[dtype]["rtol"] * 10, atol=TOL[dtype]["atol"] * 10)


@pytest.mark.parametrize("dtype", DTYPES)
def test_gaussian_density(dtype):
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 25, size=(8, 8)).astype(dtype)
    mu = np.linspace(0, 20, 5).astype(dtype)
    sigma = rng.uniform(0.5, 2, size=5).astype(dtype)
    (pf, zf), (pr, zr) = fast.gaussian_density(x, mu, sigma), ref.gaussian_density(x, mu, sigma)
    np.testing.assert_allclose(pf, pr, **TOL[dtype])
    np.testing.assert_allclose(zf, zr, **TOL[dtype])


def test_so3_exp_and_grad():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(50, 3))
    v[0] = 0.0
    v[1] = [1e-7, 0.0, -2e-7]
    r = fast.so3_exp(v)
    np.testing.assert_allclose(r, ref.so3_exp(v), atol=1e-13)
    g = rng.normal(size=(50, 3, 3))
    np.testing.assert_allclose(fast.so3_exp_grad(v, r, g), ref.so3_exp_grad(v, r, g), atol=1e-10)


def test_backend_selection_and_override():
    assert kernels.BACKEND == "compiled"
    env = dict(os.environ, SAO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sao import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
