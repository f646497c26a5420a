"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``ADACLUST_PURE_PY`` is set to a non-empty value other than
``0``. Both backends implement the same contracts (tie-breaks, accumulation
order, convergence targets), so results agree to floating-point roundoff
and all integer outputs agree exactly on non-degenerate inputs.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("ADACLUST_PURE_PY", "0") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _c_float(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest_assign(points, centroids):
    """(labels, squared distances) of each row's nearest centroid."""
    return _impl.nearest_assign(_c_float(points), _c_float(centroids))


def centroid_sums(points, labels, K: int):
    """Per-cluster coordinate sums and counts in fixed row order."""
    return _impl.centroid_sums(
        _c_float(points), np.ascontiguousarray(labels, dtype=np.int64), K
    )


def jacobi_eigh(A):
    """Unordered (eigenvalues, eigenvectors) of a symmetric matrix."""
    return _impl.jacobi_eigh(_c_float(A))
