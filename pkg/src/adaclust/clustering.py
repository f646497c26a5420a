"""Pseudo-domain discovery: k-means++ seeding, Lloyd iterations, costs, NMI.

Lloyd iterates on the squared-distance objective (the mean update is only
optimal for squared loss); all reported costs use the unsquared 2-norm mean,
which is the quantity the concentration check in :mod:`adaclust.theory`
works with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import centroid_sums, nearest_assign
from .rng import Stream


@dataclass
class Centroids:
    psi: np.ndarray
    K: int
    iteration_count: int = 0
    final_cost: float = 0.0
    objective_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def dim(self) -> int:
        return self.psi.shape[1]


@dataclass
class Assignment:
    cluster_of: np.ndarray


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    return pts


def _psi_of(centroids) -> np.ndarray:
    if isinstance(centroids, Centroids):
        return centroids.psi
    psi = np.asarray(centroids, dtype=np.float64)
    if psi.ndim != 2:
        raise ValueError("centroids must be a 2-D matrix")
    return psi


def kmeanspp_seed(points, K: int, seed) -> np.ndarray:
    """D^2-weighted seeding: first pick uniform, then proportional to the
    squared distance to the nearest chosen seed."""
    pts = _as_points(points)
    M = pts.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if M < K:
        raise ValueError("fewer points than clusters")
    stream = seed if isinstance(seed, Stream) else Stream(seed)
    chosen = np.empty(K, dtype=np.int64)
    chosen[0] = stream.randint_below(M)
    if K == 1:
        return pts[chosen[:1]].copy()
    _, best_d2 = nearest_assign(pts, pts[chosen[:1]])
    for j in range(1, K):
        total = best_d2.sum()
        if total <= 0.0:
            # all remaining mass sits on already-chosen points (duplicates);
            # fall back to the smallest unchosen index
            taken = np.zeros(M, dtype=bool)
            taken[chosen[:j]] = True
            chosen[j] = int(np.nonzero(~taken)[0][0])
        else:
            u = stream.uniform() * total
            chosen[j] = int(np.searchsorted(np.cumsum(best_d2), u, side="right"))
        _, d2_new = nearest_assign(pts, pts[chosen[j] : chosen[j] + 1])
        best_d2 = np.minimum(best_d2, d2_new)
    return pts[chosen].copy()


def _maximin_seed(pts: np.ndarray, K: int) -> np.ndarray:
    """Order-independent seeding: start nearest the coordinate mean, then
    greedy farthest point; ties break lexicographically on coordinates."""

    def lex_min(indices: np.ndarray) -> int:
        best = indices[0]
        for i in indices[1:]:
            a, b = pts[i], pts[best]
            for u, v in zip(a, b):
                if u < v:
                    best = i
                    break
                if u > v:
                    break
        return int(best)

    M = pts.shape[0]
    center = pts.mean(axis=0)
    d2 = ((pts - center) ** 2).sum(axis=1)
    chosen = [lex_min(np.nonzero(d2 == d2.min())[0])]
    _, best_d2 = nearest_assign(pts, pts[chosen])
    for _ in range(1, K):
        far = best_d2.max()
        chosen.append(lex_min(np.nonzero(best_d2 == far)[0]))
        _, d2_new = nearest_assign(pts, pts[chosen[-1:]])
        best_d2 = np.minimum(best_d2, d2_new)
    return pts[np.array(chosen, dtype=np.int64)].copy()


def _lloyd(pts, psi, K, max_iters, rel_tol):
    M = pts.shape[0]
    history = []
    labels = None
    prev_obj = None
    iterations = 0
    for _ in range(max_iters):
        labels, dist2 = nearest_assign(pts, psi)
        obj = dist2.mean()
        if history and obj > history[-1] * (1.0 + 1e-12) + 1e-15:
            raise AssertionError("Lloyd objective increased")
        history.append(obj)
        iterations += 1
        sums, counts = centroid_sums(pts, labels, K)
        empty = np.nonzero(counts == 0)[0]
        nonempty = counts > 0
        psi = psi.copy()
        psi[nonempty] = sums[nonempty] / counts[nonempty, None]
        if empty.size:
            # re-seed each empty cluster at the worst-served point
            avail = dist2.copy()
            for k in empty:
                far = int(np.argmax(avail))
                psi[k] = pts[far]
                avail[far] = -1.0
            prev_obj = obj
            continue
        if prev_obj is not None and prev_obj - obj < rel_tol * max(prev_obj, 1e-300):
            break
        prev_obj = obj
    labels, dist2 = nearest_assign(pts, psi)
    return psi, labels, dist2, iterations, np.array(history)


def kmeans_fit(
    points,
    K: int,
    seed,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
    restarts: int = 1,
    seeding: str = "kmeans++",
):
    """Fit ``K`` centroids with Lloyd iterations from seeded starts.

    ``restarts`` independent fits keep the lowest final (unsquared) cost.
    ``seeding`` is ``"kmeans++"`` (default) or ``"maximin"``, the
    deterministic row-order-independent mode.
    """
    pts = _as_points(points)
    M = pts.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if M < K:
        raise ValueError("fewer points than clusters")
    if seeding not in ("kmeans++", "maximin"):
        raise ValueError("seeding must be 'kmeans++' or 'maximin'")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    base = seed if isinstance(seed, Stream) else Stream(seed)
    best = None
    for r in range(restarts):
        if seeding == "maximin":
            start = _maximin_seed(pts, K)
        else:
            start = kmeanspp_seed(pts, K, base.split("seeding", r))
        psi, labels, dist2, iters, history = _lloyd(pts, start, K, max_iters, rel_tol)
        cost = float(np.sqrt(dist2).mean())
        if best is None or cost < best[0]:
            best = (cost, psi, labels, iters, history)
    cost, psi, labels, iters, history = best
    centroids = Centroids(
        psi=psi, K=K, iteration_count=iters, final_cost=cost, objective_history=history
    )
    return centroids, Assignment(cluster_of=labels)


def nearest_centroid(phi_x, centroids) -> tuple[int, float]:
    """Index and unsquared distance of the nearest centroid; ties take the
    smallest index."""
    psi = _psi_of(centroids)
    x = np.asarray(phi_x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != psi.shape[1]:
        raise ValueError("dimension mismatch between point and centroids")
    labels, dist2 = nearest_assign(x[None, :], psi)
    return int(labels[0]), float(np.sqrt(dist2[0]))


def assign_all(points, centroids):
    """(labels, unsquared distances) for every row."""
    psi = _psi_of(centroids)
    pts = _as_points(points)
    if pts.shape[1] != psi.shape[1]:
        raise ValueError("dimension mismatch between points and centroids")
    labels, dist2 = nearest_assign(pts, psi)
    return labels, np.sqrt(dist2)


def empirical_cost(points, centroids) -> float:
    """Mean unsquared nearest-centroid distance over the rows."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("empty points")
    _, dist = assign_all(pts, centroids)
    return float(dist.mean())


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    nb = bi.max() + 1
    counts = np.bincount(ai * nb + bi, minlength=(ai.max() + 1) * nb)
    return counts.reshape(ai.max() + 1, nb)


def nmi(partition_a, partition_b) -> float:
    """Normalized mutual information I(A;B)/sqrt(H(A)H(B)), natural log.

    Returns 0 when either partition has a single block. Exactly symmetric:
    the contingency table is put in a canonical orientation before the
    entropy sums, so nmi(a, b) == nmi(b, a) bit for bit.
    """
    a = np.asarray(partition_a).ravel()
    b = np.asarray(partition_b).ravel()
    if a.shape[0] != b.shape[0]:
        raise ValueError("partitions must have equal length")
    if a.shape[0] < 1:
        raise ValueError("partitions must be non-empty")
    C = _contingency(a, b)
    if C.shape[0] > C.shape[1]:
        C = C.T
    elif C.shape[0] == C.shape[1]:
        flat, flat_t = C.ravel(), C.T.ravel()
        cmp = np.nonzero(flat != flat_t)[0]
        if cmp.size and flat[cmp[0]] > flat_t[cmp[0]]:
            C = C.T
    M = C.sum()
    pa = C.sum(axis=1) / M
    pb = C.sum(axis=0) / M
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    if ha == 0.0 or hb == 0.0:
        return 0.0
    info = 0.0
    for i in range(C.shape[0]):
        for j in range(C.shape[1]):
            if C[i, j] > 0:
                pij = C[i, j] / M
                info += pij * np.log(pij / (pa[i] * pb[j]))
    return float(min(max(info, 0.0) / np.sqrt(ha * hb), 1.0))


def renormalized_nmi(clusters, domains, classes, eps: float = 1e-12) -> float:
    """nmi(clusters, domains) / max(nmi(clusters, classes), eps).

    One documented reading of "renormalized": domain alignment measured
    relative to how much the clustering merely tracks class structure.
    """
    return nmi(clusters, domains) / max(nmi(clusters, classes), eps)
