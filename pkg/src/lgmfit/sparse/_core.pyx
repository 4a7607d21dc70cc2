# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numeric kernels; contracts match `_py_core`."""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t

NAME = "compiled"


def chol_numeric(idx_t[::1] Ap, idx_t[::1] Aj, double[::1] Ax,
                 idx_t[::1] Rp, idx_t[::1] Rj,
                 idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                 double pivot_tol):
    cdef Py_ssize_t n = Ap.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] x_arr = np.zeros(n)
    cdef cnp.ndarray[idx_t, ndim=1] c_arr = np.asarray(Lp[:n]) + 1
    cdef double[::1] x = x_arr
    cdef idx_t[::1] c = c_arr
    cdef Py_ssize_t k, t, p, p0, p1, j
    cdef double d, xj, lkj
    cdef int fail = -1
    with nogil:
        for k in range(n):
            for p in range(Ap[k], Ap[k + 1]):
                x[Aj[p]] = Ax[p]
            d = x[k]
            x[k] = 0.0
            for t in range(Rp[k], Rp[k + 1]):
                j = Rj[t]
                xj = x[j]
                x[j] = 0.0
                lkj = xj / Lx[Lp[j]]
                p0 = Lp[j] + 1
                p1 = c[j]
                for p in range(p0, p1):
                    x[Li[p]] -= Lx[p] * lkj
                d -= lkj * lkj
                Lx[p1] = lkj
                c[j] = p1 + 1
            if not d > pivot_tol:
                fail = <int> k
                break
            Lx[Lp[k]] = sqrt(d)
    return fail


def solve_lower(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx, x):
    if x.ndim == 1:
        _solve_lower_1(Lp, Li, Lx, x)
    else:
        _solve_lower_2(Lp, Li, Lx, x)


def solve_upper(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx, x):
    if x.ndim == 1:
        _solve_upper_1(Lp, Li, Lx, x)
    else:
        _solve_upper_2(Lp, Li, Lx, x)


cdef void _solve_lower_1(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                         double[::1] x) noexcept:
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double xj
    with nogil:
        for j in range(n):
            xj = x[j] / Lx[Lp[j]]
            x[j] = xj
            for p in range(Lp[j] + 1, Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


cdef void _solve_upper_1(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                         double[::1] x) noexcept:
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double s
    with nogil:
        for j in range(n - 1, -1, -1):
            s = x[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                s -= Lx[p] * x[Li[p]]
            x[j] = s / Lx[Lp[j]]


cdef void _solve_lower_2(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                         double[:, ::1] x) noexcept:
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t r = x.shape[1]
    cdef Py_ssize_t j, p, q
    cdef double ljj, lv
    with nogil:
        for j in range(n):
            ljj = Lx[Lp[j]]
            for q in range(r):
                x[j, q] /= ljj
            for p in range(Lp[j] + 1, Lp[j + 1]):
                lv = Lx[p]
                for q in range(r):
                    x[Li[p], q] -= lv * x[j, q]


cdef void _solve_upper_2(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
                         double[:, ::1] x) noexcept:
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t r = x.shape[1]
    cdef Py_ssize_t j, p, q
    cdef double ljj, lv
    with nogil:
        for j in range(n - 1, -1, -1):
            for p in range(Lp[j] + 1, Lp[j + 1]):
                lv = Lx[p]
                for q in range(r):
                    x[j, q] -= lv * x[Li[p], q]
            ljj = Lx[Lp[j]]
            for q in range(r):
                x[j, q] /= ljj


def takahashi(idx_t[::1] Lp, idx_t[::1] Li, double[::1] Lx,
              idx_t[::1] Tp, idx_t[::1] Tidx, double[::1] Cx):
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t i, s, u, t, p0, p1, base
    cdef double lii, acc, off, diag
    cdef cnp.ndarray[double, ndim=1] l_arr = np.zeros(_max_width(Lp))
    cdef double[::1] l = l_arr
    with nogil:
        for i in range(n - 1, -1, -1):
            p0 = Lp[i]
            p1 = Lp[i + 1]
            s = p1 - p0 - 1
            lii = Lx[p0]
            if s == 0:
                Cx[p0] = 1.0 / (lii * lii)
                continue
            for t in range(s):
                l[t] = Lx[p0 + 1 + t] / lii
            base = Tp[i]
            diag = 1.0 / (lii * lii)
            for u in range(s):
                acc = 0.0
                for t in range(s):
                    acc += Cx[Tidx[base + u * s + t]] * l[t]
                off = -acc
                Cx[p0 + 1 + u] = off
                diag -= l[u] * off
            Cx[p0] = diag


cdef Py_ssize_t _max_width(idx_t[::1] Lp) noexcept:
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t i, w, best = 1
    for i in range(n):
        w = Lp[i + 1] - Lp[i]
        if w > best:
            best = w
    return best
