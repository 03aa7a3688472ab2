"""Reference numpy implementations of the numeric kernels.

These define the semantics; the compiled module ``_kernels_c`` must agree
with them to floating-point rounding.
"""

import numpy as np

_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0
# GENERATORS[k] = hat(e_k)
GENERATORS = -_LEVI


def gaussian_density(x, mu, sigma):
    """Return ``(pdf, z)`` with ``z = (x - mu) / sigma`` broadcast over channels."""
    z = (x[..., None] - mu) / sigma
    out = np.exp(-0.5 * z * z) * (_INV_SQRT_2PI / sigma)
    return out.astype(x.dtype, copy=False), z


def _hat(v):
    return np.einsum("kij,...k->...ij", GENERATORS, v)


def so3_exp(v):
    v64 = np.asarray(v, dtype=np.float64)
    theta2 = np.sum(v64 * v64, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = _hat(v64)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_exp_grad(v, r, g):
    """Vector-Jacobian product of :func:`so3_exp` for upstream gradient ``g``.

    Uses dR/dv_k = (v_k [v]x + [v x (I - R) e_k]x) R / |v|^2, switching to
    the second-order expansion around the identity for tiny angles.
    """
    v64 = np.asarray(v, dtype=np.float64)
    r64 = np.asarray(r, dtype=np.float64)
    g64 = np.asarray(g, dtype=np.float64)
    theta2 = np.sum(v64 * v64, axis=-1)
    small = theta2 < 1e-12
    vh = _hat(v64)
    eye = np.eye(3)
    # (I - R) e_k is column k of (I - R); cross with v for all k at once.
    cols = np.swapaxes(eye - r64, -1, -2)  # (..., k, 3)
    crosses = np.cross(v64[..., None, :], cols)  # (..., k, 3)
    safe = np.where(small, 1.0, theta2)
    m = (v64[..., :, None, None] * vh[..., None, :, :] + _hat(crosses)) / safe[..., None, None, None]
    d_general = m @ r64[..., None, :, :]
    gk = GENERATORS
    d_small = gk + 0.5 * (gk @ vh[..., None, :, :] + vh[..., None, :, :] @ gk)
    d = np.where(small[..., None, None, None], d_small, d_general)
    out = np.einsum("...kij,...ij->...k", d, g64)
    return out.astype(np.asarray(g).dtype, copy=False)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu_forward(x):
    """Return ``(out, cache)`` for :func:`gelu_backward`."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(cache, g):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def pair_hidden_forward(a, b, bias):
    """``gelu(a[i] + b[j] + bias)`` as ``(N, M, d)``; returns ``(out, cache)``."""
    pre = a[:, None, :] + b[None, :, :] + bias
    return gelu_forward(pre)


def pair_hidden_backward(cache, g):
    """Gradients ``(ga, gb, gbias)`` of :func:`pair_hidden_forward` for upstream ``g``."""
    gl = gelu_backward(cache, g)
    ga = gl.sum(axis=1)
    return ga, gl.sum(axis=0), ga.sum(axis=0)
