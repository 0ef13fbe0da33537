# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend; mirrors the math in kernels/_ref.py.

Each function fuses what the numpy backend does in several array passes
into one loop. Elementwise kernels (adamw_update, tanh_bwd, relu_bwd,
scatter_add_rows) reproduce the reference bit for bit; row reductions
(softmax, layernorm) may differ in the last ulp because numpy uses
pairwise summation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY
from libc.math cimport exp as c_exp
from libc.math cimport sqrt as c_sqrt


def softmax_rows(const double[:, ::1] x, mask):
    cdef Py_ssize_t R = x.shape[0], C = x.shape[1]
    out_arr = np.empty((R, C))
    cdef double[:, ::1] out = out_arr
    cdef const unsigned char[:, ::1] m
    cdef Py_ssize_t i, j
    cdef double mx, s, e
    if mask is None:
        for i in range(R):
            mx = x[i, 0]
            for j in range(1, C):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(C):
                e = c_exp(x[i, j] - mx)
                out[i, j] = e
                s += e
            for j in range(C):
                out[i, j] /= s
        return out_arr
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    for i in range(R):
        mx = -INFINITY
        for j in range(C):
            if m[i, j] and x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(C):
            if m[i, j]:
                e = c_exp(x[i, j] - mx)
                out[i, j] = e
                s += e
            else:
                out[i, j] = 0.0
        for j in range(C):
            out[i, j] /= s
    return out_arr


def softmax_rows_bwd(const double[:, ::1] y, const double[:, ::1] g, mask):
    # mask is unused: y is exactly 0 at masked entries already.
    cdef Py_ssize_t R = y.shape[0], C = y.shape[1]
    out_arr = np.empty((R, C))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(R):
        dot = 0.0
        for j in range(C):
            dot += g[i, j] * y[i, j]
        for j in range(C):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_arr


def layernorm(const double[:, ::1] x, const double[::1] gamma,
              const double[::1] beta, double eps):
    cdef Py_ssize_t R = x.shape[0], C = x.shape[1]
    y_arr = np.empty((R, C))
    xhat_arr = np.empty((R, C))
    rstd_arr = np.empty((R, 1))
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[:, ::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, r, xc
    for i in range(R):
        mu = 0.0
        for j in range(C):
            mu += x[i, j]
        mu /= C
        var = 0.0
        for j in range(C):
            xc = x[i, j] - mu
            var += xc * xc
        var /= C
        r = 1.0 / c_sqrt(var + eps)
        rstd[i, 0] = r
        for j in range(C):
            xc = (x[i, j] - mu) * r
            xhat[i, j] = xc
            y[i, j] = xc * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(const double[:, ::1] xhat, const double[:, ::1] rstd,
                  const double[::1] gamma, const double[:, ::1] g):
    cdef Py_ssize_t R = xhat.shape[0], C = xhat.shape[1]
    dx_arr = np.empty((R, C))
    dgamma_arr = np.zeros(C)
    dbeta_arr = np.zeros(C)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, dxh, r
    for i in range(R):
        m1 = 0.0
        m2 = 0.0
        for j in range(C):
            dxh = g[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= C
        m2 /= C
        r = rstd[i, 0]
        for j in range(C):
            dxh = g[i, j] * gamma[j]
            dx[i, j] = r * (dxh - m1 - xhat[i, j] * m2)
            dgamma[j] += g[i, j] * xhat[i, j]
            dbeta[j] += g[i, j]
    return dx_arr, dgamma_arr, dbeta_arr


def tanh_bwd(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t R = y.shape[0], C = y.shape[1]
    out_arr = np.empty((R, C))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(R):
        for j in range(C):
            out[i, j] = g[i, j] * (1.0 - y[i, j] * y[i, j])
    return out_arr


def relu_bwd(const double[:, ::1] x, const double[:, ::1] g):
    cdef Py_ssize_t R = x.shape[0], C = x.shape[1]
    out_arr = np.empty((R, C))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(R):
        for j in range(C):
            # Multiply (not branch) so -0.0 matches the numpy reference bitwise.
            out[i, j] = g[i, j] * (1.0 if x[i, j] > 0.0 else 0.0)
    return out_arr


def adamw_update(p_arr, g_arr, m_arr, v_arr, long t, double lr,
                 double beta1, double beta2, double eps, double weight_decay):
    # Arrays of any shape; operate on flat contiguous views.
    cdef double[::1] p = p_arr.reshape(-1)
    cdef const double[::1] g = np.ascontiguousarray(g_arr, dtype=np.float64).reshape(-1)
    cdef double[::1] m = m_arr.reshape(-1)
    cdef double[::1] v = v_arr.reshape(-1)
    cdef Py_ssize_t n = p.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        mhat = m[i] / c1
        vhat = v[i] / c2
        p[i] -= lr * (mhat / (c_sqrt(vhat) + eps) + weight_decay * p[i])


def scatter_add_rows(double[:, ::1] out, const cnp.int64_t[::1] ids,
                     const double[:, ::1] g):
    cdef Py_ssize_t R = g.shape[0], C = g.shape[1]
    cdef Py_ssize_t r, j
    cdef cnp.int64_t row
    for r in range(R):
        row = ids[r]
        for j in range(C):
            out[row, j] += g[r, j]
