"""Tape-free reverse-mode differentiation over dense numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that maps the
upstream gradient to gradients for those parents.  :func:`backward` walks the
graph in reverse topological order.  Broadcasting is deliberately narrow:
elementwise ops accept equal shapes, a scalar, or a trailing row vector
(bias-style); matmul follows numpy's stacked-matrix rules.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Mapping

import numpy as np

from . import kernels

__all__ = [
    "NonFiniteError",
    "NotScalar",
    "ParameterStore",
    "ShapeMismatch",
    "Tensor",
    "backward",
    "grad_check",
    "precision",
]


class DiffError(ValueError):
    pass


class ShapeMismatch(DiffError):
    pass


class NotScalar(DiffError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_DTYPE = [np.float32]


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for new tensors (``np.float32`` or ``np.float64``)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, *, _parents=(), _grad_fn=None, op="leaf"):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self._parents = _parents
        self._grad_fn = _grad_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or default_dtype()))


def _make(data, parents, grad_fn, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data, op=op)
    return Tensor(data, True, _parents=parents, _grad_fn=grad_fn, op=op)


def _check_elementwise(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim == 1 and sa[-1:] == sb:
        return
    if a.ndim == 1 and sb[-1:] == sa:
        return
    raise ShapeMismatch(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(range(g.ndim - len(shape)))
    return g.sum(axis=axes)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), grad_fn, "mul")


def reciprocal(x):
    out = 1.0 / x.data
    return _make(out, (x,), lambda g: (-g * out * out,), "reciprocal")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sin(x):
    xd = x.data
    return _make(np.sin(xd), (x,), lambda g: (g * np.cos(xd),), "sin")


def cos(x):
    xd = x.data
    return _make(np.cos(xd), (x,), lambda g: (-g * np.sin(xd),), "cos")


def square(x):
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def sqrt(x, eps=1e-8):
    """``sqrt(x + eps)``; the offset keeps the derivative finite at zero."""
    out = np.sqrt(x.data + eps)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(x):
    xd = x.data
    return _make(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),), "relu")


def gelu(x):
    """GELU with the tanh approximation."""
    out, cache = kernels.gelu_forward(x.data)
    return _make(out, (x,), lambda g: (kernels.gelu_backward(cache, g),), "gelu")


def pair_hidden(a, b, bias):
    """Fused ``gelu(a[i] + b[j] + bias)`` for ``(N, d)``, ``(M, d)`` and ``(d,)``: ``(N, M, d)``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1] or bias.shape != a.shape[1:]:
        raise ShapeMismatch(f"pair_hidden: incompatible shapes {a.shape}, {b.shape}, {bias.shape}")
    out, cache = kernels.pair_hidden_forward(a.data, b.data, bias.data)
    return _make(out, (a, b, bias), lambda g: kernels.pair_hidden_backward(cache, g), "pair_hidden")


def softplus(x):
    xd = x.data
    out = np.logaddexp(0, xd).astype(xd.dtype, copy=False)
    return _make(out, (x,), lambda g: (g / (1.0 + np.exp(-xd)),), "softplus")


def sigmoid(x):
    xd = x.data
    out = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clamp_max(x, limit):
    xd = x.data
    return _make(np.minimum(xd, limit), (x,), lambda g: (g * (xd < limit),), "clamp_max")


def stop_gradient(x):
    """Forward identity that blocks gradients to ``x`` and its ancestors."""
    return Tensor(x.data, op="stop_gradient")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims differ {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    # a stack times one matrix runs as a single flat GEMM
    flat = bd.ndim == 2 and ad.ndim > 2

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(ad.shape)
            else:
                ga = g @ np.swapaxes(bd, -1, -2)
            if ga.ndim > ad.ndim:
                ga = ga.reshape(-1, *ad.shape).sum(axis=0)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
                if gb.ndim > bd.ndim:
                    gb = gb.reshape(-1, *bd.shape).sum(axis=0)
        return ga, gb

    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:]) if flat else ad @ bd
    return _make(out, (a, b), grad_fn, "matmul")


def linear(x, w, b=None):
    out = matmul(x, w)
    return out if b is None else add(out, b)


def outer_sum(a, b):
    """``out[i, j] = a[i] + b[j]`` for row-stacked vectors ``(N, d)`` and ``(M, d)``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"outer_sum: incompatible shapes {a.shape} and {b.shape}")
    out = a.data[:, None, :] + b.data[None, :, :]
    return _make(out, (a, b), lambda g: (g.sum(axis=1), g.sum(axis=0)), "outer_sum")


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def repeat(x, n, axis):
    """Insert a new axis at ``axis`` and tile ``x`` ``n`` times along it."""
    out = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _make(out, (x,), lambda g: (g.sum(axis=axis),), "repeat")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1 :] != ref[:ax] + ref[ax + 1 :]:
            raise ShapeMismatch(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=ax),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=ax)),
        "concat",
    )


def index(x, idx):
    """Basic slicing (``x[idx]``) with a scatter backward."""
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), grad_fn, "index")


def gather_rows(x, rows):
    """Rows of ``x`` along axis 0 for an integer index array of any shape."""
    rows = np.asarray(rows, dtype=np.intp)
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, rows, g)
        return (full,)

    return _make(x.data[rows], (x,), grad_fn, "gather_rows")


# ---------------------------------------------------------------- reductions


def reduce_sum(x, axis=None):
    shape = x.shape

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), grad_fn, "reduce_sum")


def reduce_mean(x, axis=None):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(reduce_sum(x, axis), 1.0 / float(n))


def softmax(x, axis=-1):
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), grad_fn, "softmax")


def layer_norm(x, axis=-1, eps=1e-5):
    """Zero-mean, unit-variance normalization along ``axis`` (no affine part)."""
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), grad_fn, "layer_norm")


def l2_normalize(x, axis=-1, eps=1e-8):
    """``x / max(|x|, eps)``: exact unit vectors away from the origin."""
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    out = xd / denom

    def grad_fn(g):
        dot = np.sum(g * xd, axis=axis, keepdims=True)
        return (g / denom - np.where(big, xd * dot / (denom * denom * denom), 0.0),)

    return _make(out, (x,), grad_fn, "l2_normalize")


def gaussian_density(x, mu, sigma):
    """Normal pdf of ``x[..., None]`` under each channel's ``(mu[k], sigma[k])``.

    ``x`` has any shape ``S``; ``mu`` and ``sigma`` are ``(D,)``; output ``S + (D,)``.
    """
    x, mu, sigma = as_tensor(x), as_tensor(mu), as_tensor(sigma)
    if mu.ndim != 1 or mu.shape != sigma.shape:
        raise ShapeMismatch(f"gaussian_density: mu {mu.shape} and sigma {sigma.shape}")
    out, z = kernels.gaussian_density(x.data, mu.data, sigma.data)
    lead = tuple(range(x.ndim))

    def grad_fn(g):
        gz = g * out
        gx = gmu = gsig = None
        sd = sigma.data
        if x.requires_grad:
            gx = -(gz * z / sd).sum(axis=-1)
        if mu.requires_grad:
            gmu = (gz * z / sd).sum(axis=lead)
        if sigma.requires_grad:
            gsig = (gz * (z * z - 1.0) / sd).sum(axis=lead)
        return gx, gmu, gsig

    return _make(out, (x, mu, sigma), grad_fn, "gaussian_density")


def cross_entropy_logits(logits, targets):
    """Mean softmax cross-entropy of ``(M, C)`` logits against integer targets."""
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeMismatch(f"cross_entropy_logits: logits {logits.shape}, targets {targets.shape}")
    ld = logits.data
    shifted = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    m = len(targets)
    rows = np.arange(m)
    loss = np.mean(lse - shifted[rows, targets])

    def grad_fn(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, targets] -= 1.0
        return (g * p / m,)

    return _make(np.asarray(loss, dtype=ld.dtype), (logits,), grad_fn, "cross_entropy")


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy with sigmoid, in log-sum-exp form."""
    labels = np.asarray(labels, dtype=logits.dtype)
    if logits.shape != labels.shape:
        raise ShapeMismatch(f"bce_with_logits: logits {logits.shape}, labels {labels.shape}")
    x = logits.data
    per = np.maximum(x, 0) - x * labels + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def grad_fn(g):
        p = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g * (p - labels) / n,)

    return _make(np.asarray(per.mean(), dtype=x.dtype), (logits,), grad_fn, "bce")


def so3_exp(v):
    """Batched Rodrigues map ``(..., 3) -> (..., 3, 3)`` with an analytic backward."""
    vd = v.data
    out = kernels.so3_exp(vd)

    def grad_fn(g):
        return (kernels.so3_exp_grad(vd, out, g),)

    return _make(out.astype(vd.dtype, copy=False), (v,), grad_fn, "so3_exp")


# ---------------------------------------------------------------- backward


def backward(loss, params=None):
    """Reverse-mode gradients of a scalar ``loss``.

    With ``params`` (a mapping path -> Tensor) returns ``{path: grad}`` for every
    entry, zeros where the loss does not depend on it.  Without it, returns a
    dict keyed by ``id(tensor)`` for every leaf that received a gradient.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {}
    if loss.requires_grad:
        order = _topological(loss)
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(order):
            g = grads.pop(id(node), None) if node._grad_fn is not None else grads.get(id(node))
            if g is None or node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is None:
        return grads
    out = {}
    for path, t in params.items():
        g = grads.get(id(t))
        out[path] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    return out


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


_EPS64 = float(np.finfo(np.float64).eps)


def grad_check(f: Callable, inputs, h=1e-5):
    """Largest relative error between :func:`backward` and central differences.

    ``inputs`` is a list of arrays or Tensors; ``f`` receives float64 Tensors
    and returns a scalar Tensor.  Tensors passed with ``requires_grad=False``
    are held fixed and excluded from the comparison.  Discrepancies within
    the floating-point round-off of the central difference are discounted.
    """
    with precision(np.float64):
        leaves = []
        for x in inputs:
            if isinstance(x, Tensor):
                leaves.append(Tensor(np.array(x.data, dtype=np.float64, order="C"), x.requires_grad))
            else:
                leaves.append(Tensor(np.array(x, dtype=np.float64, order="C"), True))
        grads = backward(f(*leaves))
        worst = 0.0
        for leaf in leaves:
            if not leaf.requires_grad:
                continue
            analytic = grads.get(id(leaf), np.zeros_like(leaf.data))
            analytic = np.broadcast_to(analytic, leaf.shape)
            flat = leaf.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(f(*leaves).data)
                flat[i] = orig - h
                down = float(f(*leaves).data)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                a = float(analytic.reshape(-1)[i])
                # differences below the round-off of the difference quotient
                # itself are not measurable
                noise = 8 * _EPS64 * max(abs(up), abs(down)) / (2 * h)
                err = max(abs(a - numeric) - noise, 0.0) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- parameters


class ParameterStore(Mapping):
    """Named trainable tensors, iterated in sorted path order."""

    def __init__(self, tensors=None):
        self._items = {}
        for path, t in (tensors or {}).items():
            self[path] = t

    def __setitem__(self, path, value):
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=default_dtype()))
        t.requires_grad = True
        t.name = path
        self._items[path] = t

    def __getitem__(self, path):
        return self._items[path]

    def __iter__(self):
        return iter(sorted(self._items))

    def __len__(self):
        return len(self._items)

    def prefixed(self, prefix):
        """Sub-store view of entries under ``prefix`` (the prefix is kept)."""
        sub = ParameterStore()
        sub._items = {k: v for k, v in self._items.items() if k.startswith(prefix)}
        return sub

    def copy(self, prefixes=None):
        out = ParameterStore()
        for path in self:
            if prefixes is None or path.startswith(tuple(prefixes)):
                out[path] = Tensor(self._items[path].data.copy())
        return out

    def astype(self, dtype):
        out = ParameterStore()
        for path in self:
            out[path] = Tensor(self._items[path].data.astype(dtype))
        return out

    def arrays(self):
        return {path: self._items[path].data for path in self}
