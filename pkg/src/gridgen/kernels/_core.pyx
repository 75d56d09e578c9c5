# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel lane: fused loops for the non-BLAS hot spots.

The exp-heavy sweeps funnel through tight restrict-pointer C helpers so gcc
(-O3 -ffast-math) lowers them to libmvec SIMD calls; everything else is a
single fused pass where NumPy needs several temporaries. All loops are
sequential, so each lane is bit-deterministic regardless of batching.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

NAME = "compiled"

ctypedef fused real:
    float
    double

cdef extern from *:
    """
    #include <math.h>
    /* restrict keeps gcc's vectorizer certain there is no aliasing, so the
       expf/exp calls become libmvec SIMD kernels. */
    static void gg_vexpf(const float *restrict x, float *restrict y, long n) {
        for (long i = 0; i < n; i++) y[i] = expf(x[i]);
    }
    static void gg_vexp(const double *restrict x, double *restrict y, long n) {
        for (long i = 0; i < n; i++) y[i] = exp(x[i]);
    }
    """
    void gg_vexpf(const float *x, float *y, long n) nogil
    void gg_vexp(const double *x, double *y, long n) nogil


cdef inline void _vexp(real *x, real *y, long n) nogil:
    if real is float:
        gg_vexpf(<const float *> x, <float *> y, n)
    else:
        gg_vexp(<const double *> x, <double *> y, n)


def _softmax_impl(real[:, ::1] x, real[:, ::1] out, double temperature):
    cdef Py_ssize_t n = x.shape[0], v = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real m, s, inv_t
    inv_t = <real>(1.0 / temperature)
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, v):
                if x[i, j] > m:
                    m = x[i, j]
            for j in range(v):
                out[i, j] = (x[i, j] - m) * inv_t
        _vexp(&out[0, 0], &out[0, 0], n * v)
        for i in range(n):
            s = 0
            for j in range(v):
                s += out[i, j]
            s = 1 / s
            for j in range(v):
                out[i, j] *= s


def softmax(x, temperature=None):
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[x.ndim - 1]))
    out = np.empty_like(x2)
    _softmax_impl(x2, out, 1.0 if temperature is None else float(temperature))
    return out.reshape(x.shape)


def _softmax_backward_impl(real[:, ::1] p, real[:, ::1] dp, real[:, ::1] out):
    cdef Py_ssize_t n = p.shape[0], v = p.shape[1]
    cdef Py_ssize_t i, j
    cdef real inner
    with nogil:
        for i in range(n):
            inner = 0
            for j in range(v):
                inner += p[i, j] * dp[i, j]
            for j in range(v):
                out[i, j] = p[i, j] * (dp[i, j] - inner)


def softmax_backward(p, dp):
    p2 = np.ascontiguousarray(p.reshape(-1, p.shape[p.ndim - 1]))
    dp2 = np.ascontiguousarray(dp.reshape(-1, dp.shape[dp.ndim - 1]))
    out = np.empty_like(p2)
    _softmax_backward_impl(p2, dp2, out)
    return out.reshape(p.shape)


def _layernorm_fwd_impl(real[:, ::1] x, real[::1] gain, real[::1] bias,
                        real[:, ::1] y, real[:, ::1] xhat, real[:, ::1] rstd,
                        double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real mu, var, r, dv
    with nogil:
        for i in range(n):
            mu = 0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0
            for j in range(d):
                dv = x[i, j] - mu
                var += dv * dv
            var /= d
            r = <real>(1.0 / sqrt(var + eps))
            rstd[i, 0] = r
            for j in range(d):
                xhat[i, j] = (x[i, j] - mu) * r
                y[i, j] = xhat[i, j] * gain[j] + bias[j]


def layernorm_forward(x, gain, bias, eps=1e-5):
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[x.ndim - 1]))
    y = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty((x2.shape[0], 1), dtype=x2.dtype)
    _layernorm_fwd_impl(x2, np.ascontiguousarray(gain),
                        np.ascontiguousarray(bias), y, xhat, rstd, float(eps))
    lead = x.shape[:x.ndim - 1]
    return (y.reshape(x.shape), xhat.reshape(x.shape),
            rstd.reshape(lead + (1,)))


def _layernorm_bwd_impl(real[:, ::1] dy, real[:, ::1] xhat, real[:, ::1] rstd,
                        real[::1] gain, real[:, ::1] dx, real[::1] dg,
                        real[::1] db):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1]
    cdef Py_ssize_t i, j
    cdef real m1, m2, g
    with nogil:
        for i in range(n):
            m1 = 0
            m2 = 0
            for j in range(d):
                g = dy[i, j] * gain[j]
                m1 += g
                m2 += g * xhat[i, j]
                dg[j] += dy[i, j] * xhat[i, j]
                db[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                dx[i, j] = rstd[i, 0] * (dy[i, j] * gain[j] - m1 - xhat[i, j] * m2)


def layernorm_backward(dy, xhat, rstd, gain):
    d = dy.shape[dy.ndim - 1]
    dy2 = np.ascontiguousarray(dy.reshape(-1, d))
    xhat2 = np.ascontiguousarray(xhat.reshape(-1, d))
    rstd2 = np.ascontiguousarray(rstd.reshape(-1, 1))
    dx = np.empty_like(dy2)
    dg = np.zeros(d, dtype=dy2.dtype)
    db = np.zeros(d, dtype=dy2.dtype)
    _layernorm_bwd_impl(dy2, xhat2, rstd2, np.ascontiguousarray(gain), dx, dg, db)
    return dx.reshape(dy.shape), dg, db


cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


def _gelu_impl(real[::1] x, real[::1] e, real[::1] y):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef real z, cap
    cap = <real>80.0  # exp argument clamp; tanh saturates long before
    with nogil:
        for i in range(n):
            z = 2 * <real>GELU_C * (x[i] + <real>GELU_A * x[i] * x[i] * x[i])
            e[i] = z if z < cap else cap
        _vexp(&e[0], &e[0], n)
        for i in range(n):
            # 0.5*x*(1 + tanh(z/2)) with tanh(z/2) = (e-1)/(e+1), e = exp(z)
            y[i] = x[i] * e[i] / (e[i] + 1)


def gelu(x):
    x1 = np.ascontiguousarray(x.reshape(-1))
    y = np.empty_like(x1)
    e = np.empty_like(x1)
    _gelu_impl(x1, e, y)
    return y.reshape(x.shape)


def _gelu_bwd_impl(real[::1] x, real[::1] dy, real[::1] e, real[::1] dx):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef real z, t, dt, cap
    cap = <real>80.0
    with nogil:
        for i in range(n):
            z = 2 * <real>GELU_C * (x[i] + <real>GELU_A * x[i] * x[i] * x[i])
            e[i] = z if z < cap else cap
        _vexp(&e[0], &e[0], n)
        for i in range(n):
            t = (e[i] - 1) / (e[i] + 1)
            dt = (1 - t * t) * <real>GELU_C * (1 + 3 * <real>GELU_A * x[i] * x[i])
            dx[i] = dy[i] * (<real>0.5 * (1 + t) + <real>0.5 * x[i] * dt)


def gelu_backward(x, dy):
    x1 = np.ascontiguousarray(x.reshape(-1))
    dy1 = np.ascontiguousarray(dy.reshape(-1))
    e = np.empty_like(x1)
    dx = np.empty_like(x1)
    _gelu_bwd_impl(x1, dy1, e, dx)
    return dx.reshape(x.shape)


def _rotary_impl(real[:, :, ::1] x, real[:, ::1] cos, real[:, ::1] sin,
                 real[:, :, ::1] out, int sign):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], m = cos.shape[1]
    cdef Py_ssize_t r, i, j
    cdef real a, b, c, s, sgn
    sgn = <real>sign
    with nogil:
        for r in range(rows):
            for i in range(n):
                for j in range(m):
                    a = x[r, i, 2 * j]
                    b = x[r, i, 2 * j + 1]
                    c = cos[i, j]
                    s = sgn * sin[i, j]
                    out[r, i, 2 * j] = a * c - b * s
                    out[r, i, 2 * j + 1] = a * s + b * c


def rotary_apply(x, cos, sin, sign=1):
    lead = x.shape[:x.ndim - 2]
    x3 = np.ascontiguousarray(x.reshape(-1, x.shape[x.ndim - 2], x.shape[x.ndim - 1]))
    out = np.empty_like(x3)
    _rotary_impl(x3, np.ascontiguousarray(cos), np.ascontiguousarray(sin),
                 out, 1 if sign == 1 else -1)
    return out.reshape(lead + x.shape[x.ndim - 2:])


def _cross_entropy_impl(real[:, ::1] logits, long long[::1] targets,
                        real[::1] losses, real[:, ::1] dlogits):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef real m, s
    with nogil:
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            for j in range(v):
                dlogits[i, j] = logits[i, j] - m
            losses[i] = -dlogits[i, targets[i]]
        _vexp(&dlogits[0, 0], &dlogits[0, 0], n * v)
        for i in range(n):
            s = 0
            for j in range(v):
                s += dlogits[i, j]
            losses[i] += <real>log(s)
            s = 1 / s
            for j in range(v):
                dlogits[i, j] *= s
            dlogits[i, targets[i]] -= 1


def cross_entropy(logits, targets):
    l2 = np.ascontiguousarray(logits)
    t = np.ascontiguousarray(targets, dtype=np.int64)
    losses = np.empty(l2.shape[0], dtype=l2.dtype)
    dlogits = np.empty_like(l2)
    _cross_entropy_impl(l2, t, losses, dlogits)
    return losses, dlogits


def _kmeans_assign_impl(real[:, ::1] points, real[:, ::1] centroids,
                        long long[::1] labels, real[::1] sqdists):
    cdef Py_ssize_t n = points.shape[0], k = centroids.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, c, j
    cdef real best, acc, diff
    cdef Py_ssize_t arg
    with nogil:
        for i in range(n):
            arg = 0
            best = 0
            for c in range(k):
                acc = 0
                for j in range(d):
                    diff = points[i, j] - centroids[c, j]
                    acc += diff * diff
                if c == 0 or acc < best:
                    best = acc
                    arg = c
            labels[i] = arg
            sqdists[i] = best


def kmeans_assign(points, centroids):
    p = np.ascontiguousarray(points)
    c = np.ascontiguousarray(centroids, dtype=p.dtype)
    labels = np.empty(p.shape[0], dtype=np.int64)
    sqdists = np.empty(p.shape[0], dtype=p.dtype)
    _kmeans_assign_impl(p, c, labels, sqdists)
    return labels, sqdists


def _categorical_impl(real[:, ::1] probs, double[::1] uniforms,
                      long long[::1] out):
    cdef Py_ssize_t n = probs.shape[0], v = probs.shape[1]
    cdef Py_ssize_t i, j
    cdef double cum
    with nogil:
        for i in range(n):
            cum = 0
            out[i] = v - 1
            for j in range(v):
                cum += <double>probs[i, j]
                if cum > uniforms[i]:
                    out[i] = j
                    break


def categorical_sample(probs, uniforms):
    p = np.ascontiguousarray(probs)
    u = np.ascontiguousarray(uniforms, dtype=np.float64)
    out = np.empty(p.shape[0], dtype=np.int64)
    _categorical_impl(p, u, out)
    return out
