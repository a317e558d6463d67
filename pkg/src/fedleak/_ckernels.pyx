# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the single-batch update map.

Mirrors ``_pykernels`` exactly in signature and semantics. Work buffers are
allocated once per call; the per-sample gradient loop runs without the GIL.
"""

import numpy as np
from libc.math cimport exp, tanh

cdef enum:
    LINEAR = 0
    LOGISTIC = 1
    MLP1 = 2


cdef struct Layout:
    int kind
    int p
    int hidden
    int out
    int bias
    int d


cdef Layout _layout(int kind, int p, int hidden, int out, bint bias, Py_ssize_t d):
    cdef Layout m
    m.kind = kind
    m.p = p
    m.hidden = hidden
    m.out = out
    m.bias = bias
    m.d = <int>d
    return m


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef void _add_grad(Layout* m, const double* theta, const double* x, double y,
                    double* g, double* work) noexcept nogil:
    # g += grad_theta(theta, x, y); work holds hidden + 2*out doubles
    cdef int p = m.p, h = m.hidden, o = m.out
    cdef int c, j, k, off_b1, off_w2, off_b2, label
    cdef double z, r, s, mx, tot, dh
    cdef double* a
    cdef double* delta

    if m.kind != MLP1:
        z = 0.0
        for c in range(p):
            z += theta[c] * x[c]
        if m.bias:
            z += theta[p]
        if m.kind == LINEAR:
            r = z - y
        else:
            r = _sigmoid(z) - y
        for c in range(p):
            g[c] += r * x[c]
        if m.bias:
            g[p] += r
        return

    off_b1 = h * p
    off_w2 = off_b1 + h
    off_b2 = off_w2 + o * h
    a = work
    delta = work + h
    for j in range(h):
        z = theta[off_b1 + j]
        for c in range(p):
            z += theta[j * p + c] * x[c]
        a[j] = tanh(z)
    for k in range(o):
        z = theta[off_b2 + k]
        for j in range(h):
            z += theta[off_w2 + k * h + j] * a[j]
        delta[k] = z
    if o == 1:
        delta[0] -= y
    else:
        mx = delta[0]
        for k in range(1, o):
            if delta[k] > mx:
                mx = delta[k]
        tot = 0.0
        for k in range(o):
            delta[k] = exp(delta[k] - mx)
            tot += delta[k]
        for k in range(o):
            delta[k] /= tot
        label = <int>y
        delta[label] -= 1.0
    for k in range(o):
        g[off_b2 + k] += delta[k]
        for j in range(h):
            g[off_w2 + k * h + j] += delta[k] * a[j]
    for j in range(h):
        s = 0.0
        for k in range(o):
            s += theta[off_w2 + k * h + j] * delta[k]
        dh = s * (1.0 - a[j] * a[j])
        g[off_b1 + j] += dh
        for c in range(p):
            g[j * p + c] += dh * x[c]


cdef void _sum_grad(Layout* m, const double* theta, const double* X, const double* Y,
                    Py_ssize_t lo, Py_ssize_t hi, double* g, double* work) noexcept nogil:
    cdef Py_ssize_t i
    cdef int a
    for a in range(m.d):
        g[a] = 0.0
    for i in range(lo, hi):
        _add_grad(m, theta, X + i * m.p, Y[i], g, work)


cdef void _descent(Layout* m, double* theta, const double* X, const double* Y,
                   Py_ssize_t n, double eta, int epochs, double* g, double* work) noexcept nogil:
    cdef int e, a
    cdef double scale = eta / n
    for e in range(epochs):
        _sum_grad(m, theta, X, Y, 0, n, g, work)
        for a in range(m.d):
            theta[a] -= scale * g[a]


def _prep(theta, X, Y):
    return (np.ascontiguousarray(theta, dtype=np.float64),
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(Y, dtype=np.float64))


def mean_grad(int kind, int p, int hidden, int out, bint bias, theta, X, Y):
    theta, X, Y = _prep(theta, X, Y)
    cdef const double[::1] t = theta
    cdef const double[:, ::1] Xv = X
    cdef const double[::1] Yv = Y
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Layout m = _layout(kind, p, hidden, out, bias, t.shape[0])
    g = np.empty(m.d)
    work = np.empty(hidden + 2 * out + 1)
    cdef double[::1] gv = g
    cdef double[::1] wv = work
    cdef int a
    with nogil:
        _sum_grad(&m, &t[0], &Xv[0, 0], &Yv[0], 0, n, &gv[0], &wv[0])
        for a in range(m.d):
            gv[a] = gv[a] / n
    return g


def sgd_pass(int kind, int p, int hidden, int out, bint bias, theta, X, Y, double eta, bounds):
    theta, X, Y = _prep(theta, X, Y)
    res = theta.copy()
    b_arr = np.ascontiguousarray(bounds, dtype=np.intp)
    cdef double[::1] t = res
    cdef const double[:, ::1] Xv = X
    cdef const double[::1] Yv = Y
    cdef Py_ssize_t[::1] bv = b_arr
    cdef Layout m = _layout(kind, p, hidden, out, bias, t.shape[0])
    g = np.empty(m.d)
    work = np.empty(hidden + 2 * out + 1)
    cdef double[::1] gv = g
    cdef double[::1] wv = work
    cdef Py_ssize_t i, lo, hi
    cdef int a
    cdef double scale
    with nogil:
        for i in range(bv.shape[0] - 1):
            lo = bv[i]
            hi = bv[i + 1]
            _sum_grad(&m, &t[0], &Xv[0, 0], &Yv[0], lo, hi, &gv[0], &wv[0])
            scale = eta / (hi - lo)
            for a in range(m.d):
                t[a] -= scale * gv[a]
    return res


def local_descent(int kind, int p, int hidden, int out, bint bias, theta, X, Y,
                  double eta, int epochs):
    theta, X, Y = _prep(theta, X, Y)
    res = theta.copy()
    cdef double[::1] t = res
    cdef const double[:, ::1] Xv = X
    cdef const double[::1] Yv = Y
    cdef Layout m = _layout(kind, p, hidden, out, bias, t.shape[0])
    g = np.empty(m.d)
    work = np.empty(hidden + 2 * out + 1)
    cdef double[::1] gv = g
    cdef double[::1] wv = work
    with nogil:
        _descent(&m, &t[0], &Xv[0, 0], &Yv[0], Xv.shape[0], eta, epochs, &gv[0], &wv[0])
    return res


def update_jacobian_fd(int kind, int p, int hidden, int out, bint bias, theta, X, Y,
                       double eta, int epochs, double h):
    theta, X, Y = _prep(theta, X, Y)
    Xw_arr = X.copy()
    cdef const double[::1] t0 = theta
    cdef double[:, ::1] Xw = Xw_arr
    cdef const double[::1] Yv = Y
    cdef Py_ssize_t n = Xw.shape[0]
    cdef Layout m = _layout(kind, p, hidden, out, bias, t0.shape[0])
    J_arr = np.empty((m.d, n * p))
    up_arr = np.empty(m.d)
    dn_arr = np.empty(m.d)
    g = np.empty(m.d)
    work = np.empty(hidden + 2 * out + 1)
    cdef double[:, ::1] J = J_arr
    cdef double[::1] up = up_arr
    cdef double[::1] dn = dn_arr
    cdef double[::1] gv = g
    cdef double[::1] wv = work
    cdef Py_ssize_t b, col
    cdef int c, a
    cdef double x0
    with nogil:
        for b in range(n):
            for c in range(p):
                col = b * p + c
                x0 = Xw[b, c]
                Xw[b, c] = x0 + h
                for a in range(m.d):
                    up[a] = t0[a]
                _descent(&m, &up[0], &Xw[0, 0], &Yv[0], n, eta, epochs, &gv[0], &wv[0])
                Xw[b, c] = x0 - h
                for a in range(m.d):
                    dn[a] = t0[a]
                _descent(&m, &dn[0], &Xw[0, 0], &Yv[0], n, eta, epochs, &gv[0], &wv[0])
                Xw[b, c] = x0
                for a in range(m.d):
                    J[a, col] = ((up[a] - t0[a]) - (dn[a] - t0[a])) / (2.0 * h)
    return J_arr
