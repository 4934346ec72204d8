"""Choosing the number of factors.

Both criteria use the closed form ``SSR_k = 1 - sum_{j<=k} d_j^2`` that
holds when ``||Z||_F^2 = 1``. The rank-aware variant evaluates the fit at
thresholded singular values, which adds a data-dependent penalty and never
selects more factors than the plain criterion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ValidationError
from .panel import ScaledData
from .svdcore import soft_threshold, top_k_svd

DEFAULT_GAMMA = 0.05
DEFAULT_RMAX = 8
SSR_FLOOR = 1e-15
NORM_TOL = 1e-6


@dataclass(frozen=True)
class SelectionResult:
    rmax: int
    gamma: float
    N: int
    T: int
    d: np.ndarray
    ssr_plain: np.ndarray
    ssr_thresh: np.ndarray
    ic_plain: np.ndarray
    ic_thresh: np.ndarray
    r_hat: int
    r_bar: int
    floored: bool = False


def penalty_g(N: int, T: int) -> float:
    """``((N + T) / (N T)) log(N T / (N + T))``."""
    if N < 2 or T < 2:
        raise ValidationError(f"N and T must be at least 2, got N={N}, T={T}")
    return (N + T) / (N * T) * math.log(N * T / (N + T))


def ssr_curves(d, rmax: int, gamma: float, total: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """SSR for ``k = 0..rmax`` with plain and thresholded singular values.

    ``total`` is ``||Z||_F^2`` and must equal one.
    """
    if abs(total - 1.0) > NORM_TOL:
        raise PreconditionError(
            f"||Z||_F^2 = {total:.8g}; the closed-form SSR needs population-standardized data (=1)"
        )
    d = np.asarray(d, dtype=float)
    if rmax < 0 or rmax > d.size:
        raise ValidationError(f"rmax={rmax} must lie in [0, {d.size}]")
    d = d[:rmax]
    plain = 1.0 - np.concatenate([[0.0], np.cumsum(d * d)])
    thr = soft_threshold(d, gamma)
    thresh = 1.0 - np.concatenate([[0.0], np.cumsum(thr * thr)])
    return plain, thresh


def _argmin_first(v: np.ndarray) -> int:
    return int(np.flatnonzero(v == v.min())[0])


def select_from_singular_values(d, N: int, T: int, rmax: int = DEFAULT_RMAX,
                                gamma: float = DEFAULT_GAMMA, total: float = 1.0) -> SelectionResult:
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    plain, thresh = ssr_curves(d, rmax, gamma, total)
    floored = bool(np.any(plain < SSR_FLOOR) or np.any(thresh < SSR_FLOOR))
    k = np.arange(rmax + 1)
    g = penalty_g(N, T)
    ic_plain = np.log(np.maximum(plain, SSR_FLOOR)) + k * g
    ic_thresh = np.log(np.maximum(thresh, SSR_FLOOR)) + k * g
    return SelectionResult(rmax, float(gamma), N, T, np.asarray(d, dtype=float)[:rmax].copy(),
                           plain, thresh, ic_plain, ic_thresh,
                           _argmin_first(ic_plain), _argmin_first(ic_thresh), floored)


def select(Z: ScaledData, rmax: int = DEFAULT_RMAX, gamma: float = DEFAULT_GAMMA,
           *, seed: int = 0) -> SelectionResult:
    """Minimize both criteria over ``k = 0..rmax``; ties go to the smaller ``k``."""
    rmax = int(rmax)
    if rmax < 0 or rmax > min(Z.T, Z.N):
        raise ValidationError(f"rmax={rmax} must lie in [0, min(T, N)={min(Z.T, Z.N)}]")
    d = top_k_svd(Z.Z, rmax, seed=seed).d if rmax > 0 else np.zeros(0)
    return select_from_singular_values(d, Z.N, Z.T, rmax, gamma, Z.frobenius_sq)


def ic_gap_decomposition(result: SelectionResult) -> dict[str, np.ndarray]:
    """Exact gap ``IC_thresh(k) - IC_plain(k)`` and its first-order approximation."""
    gap = result.ic_thresh - result.ic_plain
    d = result.d
    gam = result.gamma
    contrib = np.concatenate([[0.0], np.cumsum(2.0 * d - gam)]) if gam > 0 else np.zeros(result.rmax + 1)
    approx = gam * contrib / np.maximum(result.ssr_plain, SSR_FLOOR)
    return {"k": np.arange(result.rmax + 1), "gap": gap, "approx": approx}
