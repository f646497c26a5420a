# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: nearest-centroid assignment, centroid accumulation
and the cyclic Jacobi eigensolver. Semantics match ``_kernels_py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def nearest_assign(double[:, ::1] points, double[:, ::1] centroids):
    """Nearest centroid per row; ties go to the smallest index."""
    cdef Py_ssize_t M = points.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    cdef Py_ssize_t K = centroids.shape[0]
    labels_arr = np.empty(M, dtype=np.int64)
    dist_arr = np.empty(M, dtype=np.float64)
    cdef long long[::1] labels = labels_arr
    cdef double[::1] dist2 = dist_arr
    cdef Py_ssize_t i, k, j
    cdef double best, d2, diff
    cdef long long best_k
    for i in range(M):
        best_k = 0
        best = 0.0
        for j in range(dim):
            diff = points[i, j] - centroids[0, j]
            best += diff * diff
        for k in range(1, K):
            d2 = 0.0
            for j in range(dim):
                diff = points[i, j] - centroids[k, j]
                d2 += diff * diff
            if d2 < best:
                best = d2
                best_k = k
        labels[i] = best_k
        dist2[i] = best
    return labels_arr, dist_arr


def centroid_sums(double[:, ::1] points, long long[::1] labels, Py_ssize_t K):
    """Per-cluster coordinate sums and counts, accumulated in row order."""
    cdef Py_ssize_t M = points.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    sums_arr = np.zeros((K, dim), dtype=np.float64)
    counts_arr = np.zeros(K, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef long long[::1] counts = counts_arr
    cdef Py_ssize_t i, j
    cdef long long k
    for i in range(M):
        k = labels[i]
        for j in range(dim):
            sums[k, j] += points[i, j]
        counts[k] += 1
    return sums_arr, counts_arr


def jacobi_eigh(A_in):
    """Cyclic-by-rows Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``A ~= V @ diag(w) @ V.T``, unordered.
    """
    A_arr = np.array(A_in, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t d = A_arr.shape[0]
    V_arr = np.eye(d, dtype=np.float64)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] V = V_arr
    if d == 1:
        return np.diagonal(A_arr).copy(), V_arr

    cdef double scale = 0.0
    cdef Py_ssize_t i, j, p, q, sweep
    for i in range(d):
        for j in range(d):
            scale += A[i, j] * A[i, j]
    scale = sqrt(scale)
    if scale == 0.0:
        return np.zeros(d), V_arr

    cdef double tol = 1e-14 * scale
    cdef double skip = tol / (4.0 * d * d)
    cdef double off2, apq, tau, t, c, s, gp, gq
    for sweep in range(60):
        off2 = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off2 += 2.0 * A[i, j] * A[i, j]
        if off2 <= tol * tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if fabs(apq) <= skip:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for j in range(d):
                    gp = A[p, j]
                    gq = A[q, j]
                    A[p, j] = c * gp - s * gq
                    A[q, j] = s * gp + c * gq
                for j in range(d):
                    gp = A[j, p]
                    gq = A[j, q]
                    A[j, p] = c * gp - s * gq
                    A[j, q] = s * gp + c * gq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for j in range(d):
                    gp = V[j, p]
                    gq = V[j, q]
                    V[j, p] = c * gp - s * gq
                    V[j, q] = s * gp + c * gq
    return np.diagonal(A_arr).copy(), V_arr
