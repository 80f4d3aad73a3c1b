"""Pointwise (per grid point) small-matrix algebra on component-first arrays."""

import numpy as np
import scipy.linalg

from .kernels import batched_matmul


def matmul(a, b):
    """Matrix product of two matrix fields ``(m, m, *grid)``."""
    m, k = a.shape[:2]
    k2, p = b.shape[:2]
    if k != k2:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    grid = a.shape[2:]
    lhs = np.ascontiguousarray(np.moveaxis(a.reshape(m, k, -1), -1, 0))
    rhs = np.ascontiguousarray(np.moveaxis(b.reshape(k, p, -1), -1, 0))
    out = batched_matmul(lhs, rhs)
    return np.moveaxis(out, 0, -1).reshape((m, p) + grid)


def matvec(a, v):
    """``a @ v`` for a matrix field ``(m, m, *grid)`` and a map ``(m, *grid)``."""
    return np.einsum("ij...,j...->i...", a, v)


def transpose(a):
    return np.swapaxes(a, 0, 1)


def identity(m, grid_shape):
    out = np.zeros((m, m) + tuple(grid_shape))
    for i in range(m):
        out[i, i] = 1.0
    return out


def expm(a):
    """Pointwise matrix exponential of a matrix field."""
    stacked = np.moveaxis(np.moveaxis(a, 0, -1), 0, -1)
    out = scipy.linalg.expm(stacked)
    return np.moveaxis(np.moveaxis(out, -1, 0), -1, 0)


def det(a):
    stacked = np.moveaxis(np.moveaxis(a, 0, -1), 0, -1)
    return np.linalg.det(stacked)


def inv(a):
    stacked = np.moveaxis(np.moveaxis(a, 0, -1), 0, -1)
    out = np.linalg.inv(stacked)
    return np.moveaxis(np.moveaxis(out, -1, 0), -1, 0)


def dist_to_SO(a):
    """Max over grid of the Frobenius distance to the nearest rotation (polar factor)."""
    stacked = np.moveaxis(np.moveaxis(a, 0, -1), 0, -1)
    u, s, vt = np.linalg.svd(stacked)
    d = np.sign(np.linalg.det(u @ vt))
    s_target = np.ones_like(s)
    s_target[..., -1] = d
    return float(np.max(np.sqrt(np.sum((s - s_target) ** 2, axis=-1))))


def antisymmetric_defect(a):
    """Max absolute entry of ``a + a^T``."""
    return float(np.max(np.abs(a + transpose(a)))) if a.size else 0.0


def frob_sq(a, ncomp_axes):
    """Sum of squares over the first ``ncomp_axes`` axes."""
    return np.sum(a**2, axis=tuple(range(ncomp_axes)))
