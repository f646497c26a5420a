"""Uncentered covariance eigenbasis and end-truncated projection.

The feature matrix is decomposed as V S V^T = Phi^T Phi / (M - 1) and a
window [d_start, d_end) of the eigenvalue-descending basis is kept; leading
components carry class-dominant variance, trailing ones noise, and the
window in between is where domain structure lives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import jacobi_eigh

EIGENVALUE_FLOOR = -1e-12
SIGN_EPS = 1e-12


@dataclass(frozen=True)
class SpectralBasis:
    """Orthonormal eigenbasis with a truncation window.

    ``eigenvectors`` columns are eigenvalue-descending and sign-normalized:
    the first entry of each column with magnitude above 1e-12 is positive.
    """

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    d_start: int
    d_end: int

    @property
    def d(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def width(self) -> int:
        return self.d_end - self.d_start

    @property
    def truncated(self) -> np.ndarray:
        """Columns [d_start, d_end) of the basis."""
        return self.eigenvectors[:, self.d_start : self.d_end]


def validate_window(window: tuple[int, int], d: int) -> tuple[int, int]:
    """Reject (never clamp) windows that do not fit the feature dimension."""
    d_start, d_end = int(window[0]), int(window[1])
    if not (0 <= d_start < d_end <= d):
        raise ValueError(
            f"invalid spectrum window [{d_start}, {d_end}) for dimension {d}"
        )
    return d_start, d_end


def _normalize_signs(V: np.ndarray) -> np.ndarray:
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        nonzero = np.nonzero(np.abs(col) > SIGN_EPS)[0]
        if nonzero.size and col[nonzero[0]] < 0:
            V[:, j] = -col
    return V


def covariance_eigenbasis(
    features: np.ndarray, window: tuple[int, int], center: bool = False
) -> SpectralBasis:
    """Eigenbasis of Phi^T Phi / (M - 1) with a truncation window.

    ``center`` subtracts the column means first (ablation; default keeps the
    uncentered second-moment form). Eigenvalues are clamped at zero from
    -1e-12; ties are broken by original column index after sign
    normalization.
    """
    Phi = np.asarray(features, dtype=np.float64)
    if Phi.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    M, d = Phi.shape
    if M < 2:
        raise ValueError("insufficient samples: need at least 2 rows")
    if not np.isfinite(Phi).all():
        raise ValueError("features contain non-finite values")
    d_start, d_end = validate_window(window, d)
    if center:
        Phi = Phi - Phi.mean(axis=0, keepdims=True)
    cov = (Phi.T @ Phi) / (M - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    low = eigvals.min()
    if low < EIGENVALUE_FLOOR * max(1.0, np.abs(eigvals).max()):
        raise ValueError("covariance eigenvalue below PSD tolerance")
    eigvals = np.where(eigvals < 0.0, 0.0, eigvals)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = _normalize_signs(eigvecs[:, order])
    return SpectralBasis(
        eigenvectors=eigvecs, eigenvalues=eigvals, d_start=d_start, d_end=d_end
    )


def identity_basis(d: int) -> SpectralBasis:
    """Full-window identity basis (projection is a no-op); used when the
    spectrum step is ablated away."""
    return SpectralBasis(
        eigenvectors=np.eye(d), eigenvalues=np.zeros(d), d_start=0, d_end=d
    )


def project(features: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Phi V_bar: rows mapped into the truncation window."""
    Phi = np.asarray(features, dtype=np.float64)
    if Phi.ndim != 2 or Phi.shape[1] != basis.d:
        raise ValueError(
            f"feature dimension {Phi.shape[-1]} does not match basis dimension {basis.d}"
        )
    return Phi @ basis.truncated


def project_single(x_feature: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Row-vector case of :func:`project`; identical to the batched row."""
    x = np.asarray(x_feature, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != basis.d:
        raise ValueError(
            f"feature dimension {x.shape} does not match basis dimension {basis.d}"
        )
    return project(x[None, :], basis)[0]


def check_basis(basis: SpectralBasis, tol: float = 1e-9) -> None:
    """Assert orthonormality, ordering and window consistency."""
    V, S = basis.eigenvectors, basis.eigenvalues
    d = V.shape[0]
    gram_residual = np.sqrt(((V.T @ V - np.eye(d)) ** 2).sum())
    if gram_residual > tol:
        raise AssertionError(f"basis not orthonormal: residual {gram_residual:.3e}")
    if (np.diff(S) > 0).any():
        raise AssertionError("eigenvalues not sorted descending")
    if (S < 0).any():
        raise AssertionError("negative eigenvalue after clamping")
    validate_window((basis.d_start, basis.d_end), d)
