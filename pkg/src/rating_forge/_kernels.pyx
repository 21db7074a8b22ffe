# Compiled versions of the hot loops in _fallback.py; keep the arithmetic order identical.
import numpy as np
cimport numpy as cnp


def pav(values, weights):
    cdef const double[::1] y = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    cdef double[::1] means = np.empty(n)
    cdef double[::1] wts = np.empty(n)
    cdef Py_ssize_t[::1] starts = np.empty(n, dtype=np.intp)
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, b, k, end
    cdef Py_ssize_t top = -1
    cdef double tw
    for i in range(n):
        top += 1
        means[top] = y[i]
        wts[top] = w[i]
        starts[top] = i
        while top > 0 and means[top - 1] > means[top]:
            tw = wts[top - 1] + wts[top]
            if tw > 0.0:
                means[top - 1] = (wts[top - 1] * means[top - 1] + wts[top] * means[top]) / tw
            else:
                means[top - 1] = 0.5 * (means[top - 1] + means[top])
            wts[top - 1] = tw
            top -= 1
    for b in range(top + 1):
        end = starts[b + 1] if b < top else n
        for k in range(starts[b], end):
            out[k] = means[b]
    return out_arr


def partition_dp(sg, sx, sh):
    cdef const double[::1] g = np.ascontiguousarray(sg, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(sx, dtype=np.float64)
    cdef const double[::1] h = np.ascontiguousarray(sh, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0] - 1
    best_arr = np.zeros(n + 1)
    prev_arr = np.zeros(n + 1, dtype=np.intp)
    cdef double[::1] best = best_arr
    cdef Py_ssize_t[::1] prev = prev_arr
    cdef Py_ssize_t i, j, arg
    cdef double cand, top
    for j in range(1, n + 1):
        arg = 0
        top = best[0] + (g[j] - g[0]) * (x[j] - x[0]) / (h[j] - h[0])
        for i in range(1, j):
            cand = best[i] + (g[j] - g[i]) * (x[j] - x[i]) / (h[j] - h[i])
            if cand > top:
                top = cand
                arg = i
        best[j] = top
        prev[j] = arg
    return float(best[n]), prev_arr


def max_ic_violation(gain):
    cdef const double[:, ::1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], m = g.shape[1]
    cdef Py_ssize_t i, j, bi = 0, bj = 0
    cdef double v, top = g[0, 0] - g[0, 0]
    for i in range(n):
        for j in range(m):
            v = g[i, j] - g[i, i]
            if v > top:
                top = v
                bi = i
                bj = j
    return float(top), bi, bj
