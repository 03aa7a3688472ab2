# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Each function mirrors the reference implementation's signature and return
values; loops are fused so large pair tensors are traversed once.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, sin, cos, tanh, M_PI

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double GELU_C = 0.7978845608028654  # sqrt(2 / pi)
cdef double INV_SQRT_2PI = 0.3989422804014327


cdef extern from "_fastkern.h":
    void sao_gelu_fwd_f(const float* x, float* out, size_t n) noexcept nogil
    void sao_gelu_bwd_f(const float* x, const float* g, float* out, size_t n) noexcept nogil
    void sao_pair_fwd_f(const float* a, const float* b, const float* bias, float* out,
                        size_t n, size_t m, size_t d) noexcept nogil
    void sao_pair_bwd_f(const float* a, const float* b, const float* bias, const float* g,
                        float* ga, float* gb, size_t n, size_t m, size_t d) noexcept nogil


cdef inline float* _fptr(cnp.ndarray arr):
    return <float*>cnp.PyArray_DATA(arr)


cdef inline double _gelu_d(double v) noexcept nogil:
    return 0.5 * v * (1.0 + tanh(GELU_C * (v + 0.044715 * v * v * v)))


cdef inline double _gelu_grad_d(double v) noexcept nogil:
    cdef double th = tanh(GELU_C * (v + 0.044715 * v * v * v))
    cdef double dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
    return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner


def gelu_forward(x):
    """Return ``(out, cache)``; the cache is the input itself."""
    cdef cnp.ndarray arr = np.ascontiguousarray(x)
    cdef cnp.ndarray out = np.empty_like(arr)
    cdef double[::1] xd, od
    cdef Py_ssize_t i, n = arr.size
    if arr.dtype == np.float32:
        sao_gelu_fwd_f(_fptr(arr), _fptr(out), n)
    else:
        xd = arr.reshape(-1)
        od = out.reshape(-1)
        with nogil:
            for i in range(n):
                od[i] = _gelu_d(xd[i])
    return out, arr


def gelu_backward(cache, g):
    cdef cnp.ndarray arr = cache
    cdef cnp.ndarray gg = np.ascontiguousarray(g, dtype=arr.dtype)
    cdef cnp.ndarray out = np.empty_like(arr)
    cdef double[::1] xd, gd, od
    cdef Py_ssize_t i, n = arr.size
    if arr.dtype == np.float32:
        sao_gelu_bwd_f(_fptr(arr), _fptr(gg), _fptr(out), n)
    else:
        xd = arr.reshape(-1)
        gd = gg.reshape(-1)
        od = out.reshape(-1)
        with nogil:
            for i in range(n):
                od[i] = gd[i] * _gelu_grad_d(xd[i])
    return out


def pair_hidden_forward(a, b, bias):
    """``gelu(a[i] + b[j] + bias)`` as ``(N, M, d)``; returns ``(out, cache)``.

    The cache holds the inputs; the backward pass recomputes the
    pre-activation rather than keeping an ``(N, M, d)`` buffer alive.
    """
    cdef cnp.ndarray ca = np.ascontiguousarray(a)
    cdef cnp.ndarray cb = np.ascontiguousarray(b, dtype=ca.dtype)
    cdef cnp.ndarray cbias = np.ascontiguousarray(bias, dtype=ca.dtype)
    cdef Py_ssize_t n = ca.shape[0], m = cb.shape[0], d = ca.shape[1]
    cdef cnp.ndarray out = np.empty((n, m, d), dtype=ca.dtype)
    if ca.dtype == np.float32:
        sao_pair_fwd_f(_fptr(ca), _fptr(cb), _fptr(cbias), _fptr(out), n, m, d)
    else:
        _pair_fwd_d(ca, cb, cbias, out)
    return out, (ca, cb, cbias)


cdef void _pair_fwd_d(double[:, ::1] a, double[:, ::1] b, double[::1] bias,
                      double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    for i in range(n):
        for j in range(m):
            for k in range(d):
                out[i, j, k] = _gelu_d(a[i, k] + b[j, k] + bias[k])


def pair_hidden_backward(cache, g):
    """Gradients ``(ga, gb, gbias)`` of :func:`pair_hidden_forward` for upstream ``g``."""
    cdef cnp.ndarray ca, cb, cbias
    ca, cb, cbias = cache
    cdef cnp.ndarray gg = np.ascontiguousarray(g, dtype=ca.dtype)
    cdef Py_ssize_t n = ca.shape[0], m = cb.shape[0], d = ca.shape[1]
    cdef cnp.ndarray ga = np.zeros((n, d), dtype=ca.dtype)
    cdef cnp.ndarray gb = np.zeros((m, d), dtype=ca.dtype)
    if ca.dtype == np.float32:
        sao_pair_bwd_f(_fptr(ca), _fptr(cb), _fptr(cbias), _fptr(gg),
                       _fptr(ga), _fptr(gb), n, m, d)
    else:
        _pair_bwd_d(ca, cb, cbias, gg, ga, gb)
    return ga, gb, ga.sum(axis=0)


cdef void _pair_bwd_d(double[:, ::1] a, double[:, ::1] b, double[::1] bias,
                      double[:, :, ::1] g, double[:, ::1] ga, double[:, ::1] gb) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef double gl
    for i in range(n):
        for j in range(m):
            for k in range(d):
                gl = g[i, j, k] * _gelu_grad_d(a[i, k] + b[j, k] + bias[k])
                ga[i, k] += gl
                gb[j, k] += gl


def gaussian_density(x, mu, sigma):
    xa = np.ascontiguousarray(x)
    dt = xa.dtype
    mu64 = np.ascontiguousarray(mu, dtype=np.float64)
    sig64 = np.ascontiguousarray(sigma, dtype=np.float64)
    d = mu64.shape[0]
    out = np.empty(xa.shape + (d,), dtype=dt)
    z = np.empty(xa.shape + (d,), dtype=dt)
    if dt == np.float32:
        _gauss[float](xa.reshape(-1), mu64, sig64, out.reshape(-1, d), z.reshape(-1, d))
    else:
        _gauss[double](xa.reshape(-1), mu64, sig64, out.reshape(-1, d), z.reshape(-1, d))
    return out, z


cdef void _gauss(real[::1] x, double[::1] mu, double[::1] sigma,
                 real[:, ::1] out, real[:, ::1] z) noexcept nogil:
    cdef Py_ssize_t i, k, n = x.shape[0], d = mu.shape[0]
    cdef double zz
    for i in range(n):
        for k in range(d):
            zz = (<double>x[i] - mu[k]) / sigma[k]
            z[i, k] = <real>zz
            out[i, k] = <real>(exp(-0.5 * zz * zz) * INV_SQRT_2PI / sigma[k])


cdef inline void _rodrigues(double vx, double vy, double vz, double* r) noexcept nogil:
    cdef double th2 = vx * vx + vy * vy + vz * vz
    cdef double th = sqrt(th2)
    cdef double a, b
    if th < 1e-4:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = sin(th) / th
        b = (1.0 - cos(th)) / th2
    # R = I + a K + b K^2, K^2 = v v^T - th2 I
    r[0] = 1.0 + b * (vx * vx - th2)
    r[1] = -a * vz + b * vx * vy
    r[2] = a * vy + b * vx * vz
    r[3] = a * vz + b * vy * vx
    r[4] = 1.0 + b * (vy * vy - th2)
    r[5] = -a * vx + b * vy * vz
    r[6] = -a * vy + b * vz * vx
    r[7] = a * vx + b * vz * vy
    r[8] = 1.0 + b * (vz * vz - th2)


def so3_exp(v):
    v64 = np.ascontiguousarray(v, dtype=np.float64)
    lead = v64.shape[:-1]
    flat = v64.reshape(-1, 3)
    out = np.empty((flat.shape[0], 9), dtype=np.float64)
    cdef double[:, ::1] fv = flat
    cdef double[:, ::1] fo = out
    cdef Py_ssize_t i
    for i in range(fv.shape[0]):
        _rodrigues(fv[i, 0], fv[i, 1], fv[i, 2], &fo[i, 0])
    return out.reshape(lead + (3, 3))


cdef inline void _hat(double x, double y, double z, double* k) noexcept nogil:
    k[0] = 0.0
    k[1] = -z
    k[2] = y
    k[3] = z
    k[4] = 0.0
    k[5] = -x
    k[6] = -y
    k[7] = x
    k[8] = 0.0


cdef inline void _mm3(double* a, double* b, double* c) noexcept nogil:
    cdef int i, j, l
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for l in range(3):
                s += a[3 * i + l] * b[3 * l + j]
            c[3 * i + j] = s


def so3_exp_grad(v, r, g):
    """Vector-Jacobian product of :func:`so3_exp` (see the reference for the formula)."""
    v64 = np.ascontiguousarray(v, dtype=np.float64).reshape(-1, 3)
    r64 = np.ascontiguousarray(r, dtype=np.float64).reshape(-1, 9)
    g64 = np.ascontiguousarray(g, dtype=np.float64).reshape(-1, 9)
    out = np.empty((v64.shape[0], 3), dtype=np.float64)
    cdef double[:, ::1] fv = v64
    cdef double[:, ::1] fr = r64
    cdef double[:, ::1] fg = g64
    cdef double[:, ::1] fo = out
    cdef double vh[9]
    cdef double ek[9]
    cdef double m[9]
    cdef double d[9]
    cdef double t1[9]
    cdef double t2[9]
    cdef double col[3]
    cdef double cr[3]
    cdef double th2, s
    cdef Py_ssize_t i
    cdef int k, a
    for i in range(fv.shape[0]):
        th2 = fv[i, 0] * fv[i, 0] + fv[i, 1] * fv[i, 1] + fv[i, 2] * fv[i, 2]
        _hat(fv[i, 0], fv[i, 1], fv[i, 2], vh)
        for k in range(3):
            _hat(1.0 if k == 0 else 0.0, 1.0 if k == 1 else 0.0, 1.0 if k == 2 else 0.0, ek)
            if th2 < 1e-12:
                _mm3(ek, vh, t1)
                _mm3(vh, ek, t2)
                for a in range(9):
                    d[a] = ek[a] + 0.5 * (t1[a] + t2[a])
            else:
                # column k of (I - R)
                for a in range(3):
                    col[a] = (1.0 if a == k else 0.0) - fr[i, 3 * a + k]
                cr[0] = fv[i, 1] * col[2] - fv[i, 2] * col[1]
                cr[1] = fv[i, 2] * col[0] - fv[i, 0] * col[2]
                cr[2] = fv[i, 0] * col[1] - fv[i, 1] * col[0]
                _hat(cr[0], cr[1], cr[2], t1)
                for a in range(9):
                    m[a] = (fv[i, k] * vh[a] + t1[a]) / th2
                _mm3(m, &fr[i, 0], d)
            s = 0.0
            for a in range(9):
                s += d[a] * fg[i, a]
            fo[i, k] = s
    return out.reshape(np.shape(v)).astype(np.asarray(g).dtype, copy=False)
