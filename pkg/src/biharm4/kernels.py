"""Select compiled kernels when available, pure-numpy fallbacks otherwise.

Set ``BIHARM4_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("BIHARM4_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    ball_sums = _compiled.ball_sums
    batched_matmul = _compiled.batched_matmul
    BACKEND = "cython"
else:
    ball_sums = _kernels_py.ball_sums
    batched_matmul = _kernels_py.batched_matmul

__all__ = ["ball_sums", "batched_matmul", "BACKEND"]
