# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors ``_fallback.py`` function for function."""

import numpy as np

from ._fallback import otherwise_lk

from libc.math cimport NAN
from scipy.linalg.cython_blas cimport dgemv
from posix.time cimport clock_gettime, timespec, CLOCK_MONOTONIC

cdef int RUNNING = 0
cdef int CONVERGED = 1
cdef int DIVERGED = 2
cdef int STALLED = 3
cdef double DIVERGENCE_RES = 1e12

cdef int LK_CONSTANT = 0
cdef int LK_NORMALIZED = 1


cdef inline double _now() noexcept nogil:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return ts.tv_sec + ts.tv_nsec * 1e-9


cdef inline double _rel_error(const double[::1] x, const double[::1] xstar,
                              double xstar_sq) noexcept nogil:
    cdef Py_ssize_t j
    cdef double e, acc = 0.0
    for j in range(x.shape[0]):
        e = x[j] - xstar[j]
        acc += e * e
    return acc / xstar_sq


def bucket_sum(const double[:, ::1] A, const double[::1] b, const Py_ssize_t[::1] bucket,
               const double[::1] row_sign, Py_ssize_t d):
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t i, j, h
    cdef double s
    out_A = np.zeros((d, n))
    out_b = np.zeros(d)
    cdef double[:, ::1] At = out_A
    cdef double[::1] bt = out_b
    cdef bint signed = row_sign is not None
    with nogil:
        for i in range(m):
            h = bucket[i]
            s = row_sign[i] if signed else 1.0
            for j in range(n):
                At[h, j] += s * A[i, j]
            bt[h] += s * b[i]
    return out_A, out_b


def mwrk_steps(const double[:, ::1] A, const double[::1] b, const double[::1] norms,
               double[::1] x, const double[::1] xstar, double xstar_sq, double tol,
               Py_ssize_t max_steps, double[::1] res_out, double[::1] time_out,
               Py_ssize_t[::1] sel_out):
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t i, j, k, best
    cdef double ri, w, best_w, best_r, c, res
    cdef bint track = xstar_sq > 0.0
    cdef int status = RUNNING
    cdef Py_ssize_t steps = max_steps
    # r = b - A x through BLAS: row-major A is the column-major n x m matrix A^T
    cdef char trans = b'T'
    cdef int bm = <int>n, bn = <int>m, inc = 1
    cdef double one = 1.0, minus_one = -1.0
    r_arr = np.empty(m)
    cdef double[::1] r = r_arr
    with nogil:
        for k in range(max_steps):
            for i in range(m):
                r[i] = b[i]
            dgemv(&trans, &bm, &bn, &minus_one, <double*>&A[0, 0], &bm, &x[0], &inc,
                  &one, &r[0], &inc)
            best = -1
            best_w = 0.0
            best_r = 0.0
            for i in range(m):
                if norms[i] <= 0.0:
                    continue
                ri = r[i]
                w = ri * ri / norms[i]
                if w > best_w:
                    best_w = w
                    best = i
                    best_r = ri
            if best < 0:
                steps = k
                status = STALLED
                break
            c = best_r / norms[best]
            for j in range(n):
                x[j] += c * A[best, j]
            sel_out[k] = best
            time_out[k] = _now()
            if track:
                res = _rel_error(x, xstar, xstar_sq)
                res_out[k] = res
                if res < tol:
                    steps = k + 1
                    status = CONVERGED
                    break
                if res > DIVERGENCE_RES:
                    steps = k + 1
                    status = DIVERGED
                    break
            else:
                res_out[k] = NAN
    return steps, status


def rabk_steps(const double[:, ::1] A, const double[::1] b, const double[::1] norms,
               double[::1] x, const Py_ssize_t[:, ::1] blocks, const double[::1] weights,
               int lk_mode, double alpha, const double[::1] xstar, double xstar_sq,
               double tol, double[::1] res_out, double[::1] time_out):
    cdef Py_ssize_t n = A.shape[1], tau = blocks.shape[1], nsteps = blocks.shape[0]
    cdef Py_ssize_t i, j, k, p
    cdef double ri, c, wr, num, gg, graw_sq, step, res
    cdef bint track = xstar_sq > 0.0
    cdef int status = RUNNING
    cdef Py_ssize_t steps = nsteps
    cdef Py_ssize_t degenerate = 0
    g_arr = np.empty(n)
    graw_arr = np.empty(n)
    cdef double[::1] g = g_arr
    cdef double[::1] graw = graw_arr
    with nogil:
        for k in range(nsteps):
            for j in range(n):
                g[j] = 0.0
                graw[j] = 0.0
            num = 0.0
            for p in range(tau):
                i = blocks[k, p]
                ri = -b[i]
                for j in range(n):
                    ri += A[i, j] * x[j]
                c = weights[p] * ri / norms[i]
                wr = weights[p] * ri
                if lk_mode == LK_NORMALIZED:
                    num += c * ri
                elif lk_mode != LK_CONSTANT:
                    num += wr * ri
                for j in range(n):
                    g[j] += c * A[i, j]
                if lk_mode != LK_CONSTANT and lk_mode != LK_NORMALIZED:
                    for j in range(n):
                        graw[j] += wr * A[i, j]
            gg = 0.0
            for j in range(n):
                gg += g[j] * g[j]
            if gg == 0.0:
                degenerate += 1
            else:
                if lk_mode == LK_CONSTANT:
                    step = alpha
                elif lk_mode == LK_NORMALIZED:
                    step = alpha * num / gg
                else:
                    graw_sq = 0.0
                    for j in range(n):
                        graw_sq += graw[j] * graw[j]
                    if graw_sq > 0.0:
                        step = alpha * num / graw_sq
                    else:
                        degenerate += 1
                        with gil:
                            step = alpha * otherwise_lk(
                                np.asarray(A)[np.asarray(blocks[k])], np.asarray(weights))
                for j in range(n):
                    x[j] -= step * g[j]
            time_out[k] = _now()
            if track:
                res = _rel_error(x, xstar, xstar_sq)
                res_out[k] = res
                if res < tol:
                    steps = k + 1
                    status = CONVERGED
                    break
                if res > DIVERGENCE_RES:
                    steps = k + 1
                    status = DIVERGED
                    break
            else:
                res_out[k] = NAN
    return steps, status, degenerate
