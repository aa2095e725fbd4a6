"""Backend selection for the shuffle-refit hot loop.

The compiled Cython kernel is preferred when it was built; the numpy
fallback is mathematically identical. Set POLYMODEL_PURE_PYTHON=1 to force
the fallback (used by the benchmark for comparison).
"""
import os

from ._shuffle_np import batched_r2 as _batched_r2_np

BACKEND = "numpy"
batched_r2 = _batched_r2_np

if not os.environ.get("POLYMODEL_PURE_PYTHON"):
    try:
        from ._shuffle_cy import batched_r2 as _batched_r2_cy

        batched_r2 = _batched_r2_cy
        BACKEND = "cython"
    except ImportError:
        pass

__all__ = ["batched_r2", "BACKEND", "_batched_r2_np"]
