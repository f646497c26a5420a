"""Pure numpy implementations of the hot kernels.

Mirrors the compiled module ``_kernels``: same signatures, same tie-break
and accumulation-order semantics. Selected by ``_backend`` when the
extension is unavailable or ``ADACLUST_PURE_PY`` is set.
"""

from __future__ import annotations

import numpy as np


def nearest_assign(points: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per row.

    Returns ``(labels, dist2)`` where ``labels[i]`` is the index of the
    centroid closest to ``points[i]`` (ties -> smallest index) and
    ``dist2[i]`` the squared Euclidean distance to it.
    """
    M = points.shape[0]
    labels = np.empty(M, dtype=np.int64)
    dist2 = np.empty(M, dtype=np.float64)
    # chunk rows so the (block x K x p) temporary stays small
    per_row = max(centroids.shape[0] * points.shape[1], 1)
    step = max(1, 4_000_000 // per_row)
    for start in range(0, M, step):
        block = points[start : start + step]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        lab = np.argmin(d2, axis=1)
        labels[start : start + step] = lab
        dist2[start : start + step] = d2[np.arange(block.shape[0]), lab]
    return labels, dist2


def centroid_sums(points: np.ndarray, labels: np.ndarray, K: int):
    """Per-cluster coordinate sums and counts, accumulated in row order."""
    sums = np.zeros((K, points.shape[1]), dtype=np.float64)
    counts = np.zeros(K, dtype=np.int64)
    np.add.at(sums, labels, points)
    np.add.at(counts, labels, 1)
    return sums, counts


def jacobi_eigh(A: np.ndarray):
    """Cyclic-by-rows Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``A ~= V @ diag(w) @ V.T``; no eigenvalue
    ordering is imposed here. Sweeps run until the off-diagonal Frobenius
    mass falls below 1e-14 of the input Frobenius norm.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    d = A.shape[0]
    V = np.eye(d)
    if d == 1:
        return np.diagonal(A).copy(), V
    scale = np.sqrt((A * A).sum())
    if scale == 0.0:
        return np.zeros(d), V
    tol = 1e-14 * scale
    skip = tol / (4.0 * d * d)
    for _ in range(60):
        off2 = (A * A).sum() - (np.diagonal(A) ** 2).sum()
        if off2 <= tol * tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                A[p, q] = 0.0
                A[q, p] = 0.0
                vec_p = V[:, p].copy()
                vec_q = V[:, q].copy()
                V[:, p] = c * vec_p - s * vec_q
                V[:, q] = s * vec_p + c * vec_q
    return np.diagonal(A).copy(), V
