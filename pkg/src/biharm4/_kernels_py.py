"""Pure-numpy reference versions of the compiled kernels."""

import numpy as np


def ball_sums(density, offsets):
    """Sum ``density`` over the periodic stencil ``offsets`` around every grid point."""
    density = np.asarray(density, dtype=float)
    out = np.zeros_like(density)
    for off in np.asarray(offsets):
        out += np.roll(density, shift=tuple(-int(o) for o in off), axis=(0, 1, 2, 3))
    return out


def batched_matmul(lhs, rhs):
    """``out[g] = lhs[g] @ rhs[g]`` for stacks of small matrices."""
    return np.matmul(lhs, rhs)
