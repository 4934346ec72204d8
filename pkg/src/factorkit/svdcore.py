"""Partial SVD by seeded randomized subspace iteration, and singular value thresholding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

OVERSAMPLE = 10
MIN_POWER_PASSES = 2
TIE_TOL = 1e-12


@dataclass(frozen=True)
class PartialSvd:
    """Top-k singular triplets ``Z ~ U diag(d) V'``.

    Columns are sign-normalized so the largest-magnitude entry of each
    column of ``U`` is positive.
    """

    U: np.ndarray
    d: np.ndarray
    V: np.ndarray
    converged: bool = True
    iterations: int = 0
    degenerate: bool = False
    ties: bool = False

    @property
    def k(self) -> int:
        return self.d.size


def _fix_signs(U, V):
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def _finish(U, d, V, converged, iterations):
    U, V = _fix_signs(U, V)
    ties = bool(np.any(np.abs(np.diff(d)) < TIE_TOL * max(1.0, d[0]))) if d.size > 1 else False
    return PartialSvd(U, d, V, converged=converged, iterations=iterations, ties=ties)


def top_k_svd(Z, k: int, tol: float = 1e-10, max_iter: int = 500, seed: int = 0) -> PartialSvd:
    """Leading ``k`` singular triplets of ``Z``.

    Uses subspace iteration on a Gaussian sketch of width ``k + 10``. The
    iteration stops once ``||(I - QQ')Z V_k||_F <= tol * max(1, d_1)``,
    which is exactly the residual ``||Z V - U diag(d)||_F`` of the
    Rayleigh-Ritz estimate. When the sketch would cover ``min(T, N)``
    columns a dense SVD is used instead.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {Z.shape}")
    m, n = Z.shape
    k = int(k)
    if not 1 <= k <= min(m, n):
        raise ValidationError(f"k={k} must lie in [1, min(T, N)={min(m, n)}]")
    if not tol > 0:
        raise ValidationError("tol must be positive")

    if not np.any(Z):
        U = np.eye(m, k)
        V = np.eye(n, k)
        return PartialSvd(U, np.zeros(k), V, converged=True, iterations=0, degenerate=True)

    width = k + OVERSAMPLE
    if width >= min(m, n):
        U, d, Vt = np.linalg.svd(Z, full_matrices=False)
        return _finish(U[:, :k], d[:k], Vt[:k].T, True, 0)

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(Z @ rng.standard_normal((n, width)))
    converged = False
    it = 0
    for it in range(1, max(max_iter, MIN_POWER_PASSES) + 1):
        Q, _ = np.linalg.qr(Z.T @ Q)
        Q, _ = np.linalg.qr(Z @ Q)
        if it < MIN_POWER_PASSES:
            continue
        Ub, d, Vt = np.linalg.svd(Q.T @ Z, full_matrices=False)
        V = Vt[:k].T
        ZV = Z @ V
        resid = np.linalg.norm(ZV - Q @ (Q.T @ ZV))
        if resid <= tol * max(1.0, d[0]):
            converged = True
            break
    U = Q @ Ub[:, :k]
    return _finish(U, d[:k], V, converged, it)


def soft_threshold(d, gamma: float) -> np.ndarray:
    """``max(d_j - gamma, 0)`` elementwise."""
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    return np.maximum(np.asarray(d, dtype=float) - gamma, 0.0)


def effective_rank(d_thresholded) -> int:
    return int(np.count_nonzero(np.asarray(d_thresholded) > 0))


def svt(Z, k: int, gamma: float, **svd_kwargs) -> np.ndarray:
    """Rank-``k`` singular value thresholding ``U_k diag((d - gamma)_+) V_k'``."""
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    p = top_k_svd(Z, k, **svd_kwargs)
    return (p.U * soft_threshold(p.d, gamma)) @ p.V.T


def svt_objective(Z, L, gamma: float) -> float:
    """``gamma ||L||_* + 0.5 ||Z - L||_F^2``."""
    nuc = np.linalg.svd(L, compute_uv=False).sum()
    return float(gamma * nuc + 0.5 * np.sum((Z - L) ** 2))
