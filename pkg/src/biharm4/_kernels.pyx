# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see _kernels_py.py for the reference implementations."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ball_sums(double[:, :, :, ::1] density, long[:, ::1] offsets):
    """Sum ``density`` over the periodic stencil ``offsets`` around every grid point."""
    cdef Py_ssize_t n = density.shape[0]
    cdef Py_ssize_t nb = offsets.shape[0]
    cdef Py_ssize_t a, b, c, d, j, split
    cdef Py_ssize_t ia, ib, ic, o3
    out = np.zeros((n, n, n, n), dtype=np.float64)
    cdef double[:, :, :, ::1] res = out
    cdef long[:, ::1] off = np.mod(np.asarray(offsets), n).astype(np.int_)
    for j in range(nb):
        o3 = off[j, 3]
        split = n - o3
        for a in range(n):
            ia = (a + off[j, 0]) % n
            for b in range(n):
                ib = (b + off[j, 1]) % n
                for c in range(n):
                    ic = (c + off[j, 2]) % n
                    # contiguous runs of the last axis, wrapped once
                    for d in range(split):
                        res[a, b, c, d] += density[ia, ib, ic, d + o3]
                    for d in range(split, n):
                        res[a, b, c, d] += density[ia, ib, ic, d + o3 - n]
    return out


def batched_matmul(double[:, :, ::1] lhs, double[:, :, ::1] rhs):
    """``out[g] = lhs[g] @ rhs[g]`` for stacks of small matrices."""
    cdef Py_ssize_t ng = lhs.shape[0]
    cdef Py_ssize_t m = lhs.shape[1]
    cdef Py_ssize_t k = lhs.shape[2]
    cdef Py_ssize_t p = rhs.shape[2]
    cdef Py_ssize_t g, i, j, q
    cdef double acc
    if rhs.shape[0] != ng or rhs.shape[1] != k:
        raise ValueError("incompatible stacks")
    out = np.empty((ng, m, p), dtype=np.float64)
    cdef double[:, :, ::1] res = out
    for g in range(ng):
        for i in range(m):
            for j in range(p):
                acc = 0.0
                for q in range(k):
                    acc += lhs[g, i, q] * rhs[g, q, j]
                res[g, i, j] = acc
    return out
