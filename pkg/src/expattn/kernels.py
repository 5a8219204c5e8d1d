"""Kernel backend selection.

The compiled extension is used when importable; set ``EXPATTN_KERNELS=python``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("EXPATTN_KERNELS", "").lower() != "python":
    try:
        from . import _kernels_cy as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def softmax_average(queries, keys, log_weights, scale=1.0):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    k = np.ascontiguousarray(keys, dtype=np.float64)
    lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    return _impl.softmax_average(q, k, lw, float(scale))


def max_pairwise_distance(points):
    p = np.ascontiguousarray(points, dtype=np.float64)
    return float(_impl.max_pairwise_distance(p))
