# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every routine here has a line-for-line twin in ``_kernels_py`` that performs the
same floating-point operations in the same order, so both backends produce
bit-identical output.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"


cdef inline double _g_shape(double u, double t, double xi) nogil:
    if u <= -xi:
        return t
    if u >= xi:
        return 1.0 - t
    return 0.5 + (0.5 - t) * u / xi


cdef inline double _clamp01(double v) nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def g_shape(double u, double t, double xi):
    return _g_shape(u, t, xi)


cdef int _solve_spd(double[:, ::1] A, double[::1] b, double ridge,
                    double[:, ::1] L, double[::1] z, double[::1] out) nogil:
    """Cholesky solve of (A + ridge*I) out = b. Returns 0, or -1 on a bad pivot."""
    cdef Py_ssize_t p = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(p):
        s = A[j, j] + ridge
        for k in range(j):
            s = s - L[j, k] * L[j, k]
        if not (s > 0.0):
            return -1
        L[j, j] = sqrt(s)
        for i in range(j + 1, p):
            s = A[i, j]
            for k in range(j):
                s = s - L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s = s - L[i, k] * z[k]
        z[i] = s / L[i, i]
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s = s - L[k, i] * out[k]
        out[i] = s / L[i, i]
    return 0


def design_loop(double[:, ::1] phi_plus, double[:, ::1] phi_minus,
                double[::1] z_plus, double[::1] z_minus, double[::1] u,
                double[::1] g_burn, double[::1] t_seq, double[::1] xi_seq,
                Py_ssize_t n0, double ridge):
    """Run the sequential design; see ``_kernels_py.design_loop``."""
    cdef Py_ssize_t n = phi_plus.shape[0]
    cdef Py_ssize_t p = phi_plus.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double p1, pm1, qp, qm, w, yv, acc
    cdef int status = -1

    a_out = np.empty(n, dtype=np.int64)
    y_out = np.empty(n, dtype=np.float64)
    w_out = np.empty(n, dtype=np.float64)
    g1_out = np.empty(n, dtype=np.float64)
    beta_out = np.full((n, p), np.nan, dtype=np.float64)
    cdef cnp.int64_t[::1] a_v = a_out
    cdef double[::1] y_v = y_out
    cdef double[::1] w_v = w_out
    cdef double[::1] g1_v = g1_out
    cdef double[:, ::1] beta_v = beta_out

    cdef double[:, ::1] S = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] rhs = np.zeros(p, dtype=np.float64)
    cdef double[:, ::1] L = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] z = np.zeros(p, dtype=np.float64)
    cdef double[::1] beta = np.zeros(p, dtype=np.float64)
    cdef double[:, ::1] phi

    with nogil:
        for i in range(n):
            if i < n0:
                p1 = g_burn[i]
                pm1 = 1.0 - p1
            else:
                if _solve_spd(S, rhs, ridge, L, z, beta) != 0:
                    status = <int>i
                    break
                acc = 0.0
                for j in range(p):
                    acc = acc + phi_plus[i, j] * beta[j]
                qp = _clamp01(acc)
                acc = 0.0
                for j in range(p):
                    acc = acc + phi_minus[i, j] * beta[j]
                qm = _clamp01(acc)
                p1 = _g_shape(qp - qm, t_seq[i], xi_seq[i])
                pm1 = _g_shape(qm - qp, t_seq[i], xi_seq[i])
                for j in range(p):
                    beta_v[i, j] = beta[j]
            g1_v[i] = p1
            if u[i] < p1:
                a_v[i] = 1
                yv = z_plus[i]
                w = p1
                phi = phi_plus
            else:
                a_v[i] = -1
                yv = z_minus[i]
                w = pm1
                phi = phi_minus
            y_v[i] = yv
            w_v[i] = w
            for j in range(p):
                rhs[j] = rhs[j] + phi[i, j] * yv / w
                for k in range(p):
                    S[j, k] = S[j, k] + phi[i, j] * phi[i, k] / w
    return a_out, y_out, w_out, g1_out, beta_out, status


def threshold_sweep(double[::1] xs, double[::1] diff, double base,
                    double lo, double hi):
    """Exact argmax of a running sum over sorted breakpoints.

    Returns ``(tau, best_sum)``. Candidates are ``lo`` followed by every distinct
    ``xs`` value in ``(lo, hi]``; ties keep the smallest candidate.
    """
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t k = 0
    cdef double running = base
    cdef double best, tau
    with nogil:
        while k < n and xs[k] <= lo:
            running = running + diff[k]
            k += 1
        best = running
        tau = lo
        while k < n and xs[k] <= hi:
            running = running + diff[k]
            if k + 1 < n and xs[k + 1] == xs[k]:
                k += 1
                continue
            if running > best:
                best = running
                tau = xs[k]
            k += 1
    return tau, best
