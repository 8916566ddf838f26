"""Eigen-based utilities for covariance matrices.

Conventions: eigenvalues are sorted in descending order, and an eigenvalue
counts as zero when it is at most ``RANK_RTOL * lambda_max``.  Quadratic forms
in the pseudo-inverse are ``+inf`` for vectors with a component outside the
positive eigenspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError

RANK_RTOL = 1e-12
NEG_TOL = 1e-10
SYM_TOL = 1e-8


@dataclass(frozen=True)
class EigenDecomposition:
    Q: np.ndarray
    eigenvalues: np.ndarray  # descending

    @property
    def rank_cut(self) -> float:
        lmax = self.eigenvalues[0] if self.eigenvalues.size else 0.0
        return RANK_RTOL * max(lmax, 0.0)

    @property
    def positive(self) -> np.ndarray:
        return self.eigenvalues > self.rank_cut

    def reconstruct(self) -> np.ndarray:
        return (self.Q * self.eigenvalues) @ self.Q.T


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - A.T), initial=0.0) > SYM_TOL * scale:
        raise ModelError("matrix is not symmetric within tolerance")
    return 0.5 * (A + A.T)


def eigh_desc(A) -> EigenDecomposition:
    """Symmetric eigendecomposition with eigenvalues in descending order."""
    A = _check_symmetric(A)
    w, Q = np.linalg.eigh(A)
    return EigenDecomposition(Q[:, ::-1].copy(), w[::-1].copy())


def _clamped(A) -> EigenDecomposition:
    eig = eigh_desc(A)
    lmax = max(abs(eig.eigenvalues).max(initial=0.0), 1.0)
    if eig.eigenvalues.size and eig.eigenvalues[-1] < -NEG_TOL * lmax:
        raise ModelError(f"matrix is not PSD: smallest eigenvalue {eig.eigenvalues[-1]:.3e}")
    return EigenDecomposition(eig.Q, np.clip(eig.eigenvalues, 0.0, None))


def psd_sqrt(A) -> np.ndarray:
    """Symmetric PSD square root; tiny negative eigenvalues are clamped to 0."""
    eig = _clamped(A)
    return (eig.Q * np.sqrt(eig.eigenvalues)) @ eig.Q.T


def pinv(A) -> np.ndarray:
    eig = _clamped(A)
    inv = np.zeros_like(eig.eigenvalues)
    pos = eig.positive
    inv[pos] = 1.0 / eig.eigenvalues[pos]
    return (eig.Q * inv) @ eig.Q.T


def pinv_quad_form(A, beta) -> float:
    """``beta^T A^+ beta``, or ``inf`` if beta leaves the positive eigenspace."""
    eig = _clamped(A)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    coords = eig.Q.T @ beta
    pos = eig.positive
    norm = float(np.linalg.norm(beta))
    residual = float(np.linalg.norm(coords[~pos]))
    if residual > RANK_RTOL * norm * max(1.0, eig.eigenvalues.size) and residual > 0.0:
        return float("inf")
    return float(np.sum(coords[pos] ** 2 / eig.eigenvalues[pos]))


def truncated_inv_sqrt(A, K: float) -> np.ndarray:
    """``Q diag(min(1/lambda_i, K^2))^{1/2} Q^T`` with ``1/0 = inf``."""
    if not K > 0:
        raise ValueError(f"K must be positive, got {K}")
    eig = _clamped(A)
    pos = eig.positive
    inv = np.full_like(eig.eigenvalues, K * K)
    inv[pos] = np.minimum(1.0 / eig.eigenvalues[pos], K * K)
    return (eig.Q * np.sqrt(inv)) @ eig.Q.T
