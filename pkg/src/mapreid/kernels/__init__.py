"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``MAPREID_DISABLE_NUMBA`` is set to a truthy value. Both
implementations stay importable (``kernels.numpy_impl``,
``kernels.numba_impl``) so tests and the benchmark can compare them.
"""
import os

from . import _numpy as numpy_impl

_disabled = os.environ.get("MAPREID_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

numba_impl = None
if not _disabled:
    try:
        from . import _numba as numba_impl
    except ImportError:  # numba missing or broken
        numba_impl = None

USE_NUMBA = numba_impl is not None
_impl = numba_impl if USE_NUMBA else numpy_impl

soft_hist_forward = _impl.soft_hist_forward
soft_hist_backward = _impl.soft_hist_backward
# sort-bound: numpy's argsort beats numba's mergesort here (see benchmarks/bench_kernels.py)
rank_queries = numpy_impl.rank_queries
pairwise_euclidean = _impl.pairwise_euclidean

__all__ = [
    "USE_NUMBA",
    "numpy_impl",
    "numba_impl",
    "soft_hist_forward",
    "soft_hist_backward",
    "rank_queries",
    "pairwise_euclidean",
]
