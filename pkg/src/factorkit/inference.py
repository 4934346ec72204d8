"""Rotations, asymptotic variances, confidence intervals and factor-augmented regression.

Everything here works in data units: ``F`` has ``F'F/T = diag(d)`` for PC
fits, ``X = sqrt(N T) Z`` and residuals are ``X - F Lambda'``. Variances of
thresholded estimates are the unregularized ones sandwiched by the
shrinkage matrix ``Delta = diag(sqrt((d - gamma)_+ / d))`` on the retained
factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from statsmodels.stats.sandwich_covariance import S_hac_simple

from .errors import LinearSolveError, ValidationError
from .estimators import APC, FactorFit
from .panel import ScaledData


def default_hac_lags(T: int) -> int:
    return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))


def _inv(A, what):
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(f"singular {what}; the simulated draw is degenerate") from exc


def _require_svd(fit: FactorFit):
    if fit.U is None or fit.V is None:
        raise ValidationError("fit carries no singular vectors; use an apc, pc or rpc fit")


# ---------------------------------------------------------------------------
# rotations


@dataclass(frozen=True)
class RotationDiagnostics:
    H_tilde: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H_hat: np.ndarray
    H_bar: np.ndarray | None
    G_bar: np.ndarray | None
    Delta: np.ndarray


def rotation_diagnostics(fit: FactorFit, F0: np.ndarray, Lambda0: np.ndarray) -> RotationDiagnostics:
    """Rotation matrices linking the estimates to known factors and loadings.

    ``H_bar`` and ``G_bar`` are None when some ``d_j <= gamma`` (``Delta`` singular).
    """
    _require_svd(fit)
    T, N = fit.T, fit.N
    d = fit.d
    F_t = math.sqrt(T) * fit.U
    L_t = math.sqrt(N) * fit.V * d
    H_tilde = (Lambda0.T @ Lambda0 / N) @ (F0.T @ F_t / T) / (d * d)
    H1 = (Lambda0.T @ Lambda0) @ _inv(L_t.T @ Lambda0, "loading cross-moment")
    H2 = _inv(F0.T @ F0, "factor second moment") @ (F0.T @ F_t)
    H_hat = H_tilde * np.sqrt(d)
    Delta = np.diag(fit.delta)
    H_bar = G_bar = None
    if np.all(fit.d_gamma > 0):
        H_bar = H_hat @ Delta
        G_bar = Delta @ _inv(H_hat, "rotation")
    return RotationDiagnostics(H_tilde, H1, H2, H_hat, H_bar, G_bar, Delta)


# ---------------------------------------------------------------------------
# asymptotic variances


@dataclass(frozen=True)
class AvarEstimates:
    i: int
    t: int
    method: str
    retained: np.ndarray
    Gamma_t: np.ndarray
    Phi_i: np.ndarray
    avar_F_t: np.ndarray
    avar_Lambda_i: np.ndarray
    A_C_it: float


def avar(fit: FactorFit, Z: ScaledData, i: int, t: int, hac_lags: int | None = None) -> AvarEstimates:
    """Plug-in asymptotic variances at series ``i`` and period ``t``.

    ``Gamma_t = (1/N) sum_i Lambda_i Lambda_i' e_it^2`` assumes cross-sectional
    independence; ``Phi_i`` is the Bartlett-kernel long-run variance of
    ``F_t e_it``. ``A_C_it`` is the variance of the estimated common
    component ``Lambda_i' avar(F_t) Lambda_i / N + F_t' avar(Lambda_i) F_t / T``.
    """
    _require_svd(fit)
    T, N = fit.T, fit.N
    if not (0 <= i < N and 0 <= t < T):
        raise ValidationError(f"(i, t) = ({i}, {t}) outside the {N} x {T} panel")
    lags = default_hac_lags(T) if hac_lags is None else int(hac_lags)
    if lags < 0:
        raise ValidationError(f"hac_lags must be nonnegative, got {lags}")
    keep = fit.d_gamma > 0
    if not keep.any():
        raise ValidationError("no factor survives the threshold; lower gamma or use pc")
    d = fit.d[keep]
    root = np.sqrt(d)
    F_hat = math.sqrt(T) * fit.U[:, keep] * root
    L_hat = math.sqrt(N) * fit.V[:, keep] * root
    X = Z.X
    e = X - F_hat @ L_hat.T

    Gamma_t = (L_hat.T * e[t] ** 2) @ L_hat / N
    scores = F_hat * e[:, i][:, None]
    Phi_i = S_hac_simple(scores, nlags=lags) / T
    Phi_i = 0.5 * (Phi_i + Phi_i.T)

    Dinv = 1.0 / d
    aF = Dinv[:, None] * Gamma_t * Dinv[None, :]
    aL = Dinv[:, None] * Phi_i * Dinv[None, :]
    if fit.gamma > 0:
        s = fit.delta[keep]
        aF = s[:, None] * aF * s[None, :]
        aL = s[:, None] * aL * s[None, :]
        F_use, L_use = F_hat[t] * s, L_hat[i] * s
    elif fit.method == APC:
        # F = F_hat D^{-1/2}, Lambda = Lambda_hat D^{1/2}
        aF = aF * np.outer(1 / root, 1 / root)
        aL = aL * np.outer(root, root)
        F_use, L_use = F_hat[t] / root, L_hat[i] * root
    else:
        F_use, L_use = F_hat[t], L_hat[i]
    A = float(L_use @ aF @ L_use / N + F_use @ aL @ F_use / T)
    return AvarEstimates(i, t, fit.method, np.flatnonzero(keep), Gamma_t, Phi_i, aF, aL, A)


def common_component_ci(fit: FactorFit, av: AvarEstimates, level: float = 0.95) -> tuple[float, float, float]:
    """``(estimate, bias, half_width)`` for ``C_it``.

    ``bias`` estimates ``E[C_it estimate] - C_it``; the bias-corrected value
    is ``estimate - bias``. Thresholded fits shrink the common component by
    ``gamma F_t' (D^gamma)^{-1} Lambda_i`` and the bias is minus that
    amount; unregularized fits have zero bias.
    """
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    keep = av.retained
    dg = fit.d_gamma[keep]
    if keep.size == 0 or np.any(dg <= 0):
        raise ValidationError("bias correction needs d_j > gamma for every retained factor; reduce r")
    i, t = av.i, av.t
    F_t = fit.F[t, keep]
    L_i = fit.Lambda[i, keep]
    estimate = float(fit.F[t] @ fit.Lambda[i])
    bias = -fit.gamma * float(F_t @ (L_i / dg)) if fit.gamma > 0 else 0.0
    z = NormalDist().inv_cdf(0.5 + level / 2)
    return estimate, bias, z * math.sqrt(max(av.A_C_it, 0.0))


def amse_ratio(delta1: float, C0_it: float, avar_C: float) -> float:
    """AMSE of the shrunk common component relative to the unshrunk one."""
    if not 0 <= delta1 <= 1:
        raise ValidationError(f"delta1 must lie in [0, 1], got {delta1}")
    if not avar_C > 0:
        raise ValidationError(f"avar_C must be positive, got {avar_C}")
    return (delta1 - 1.0) ** 2 * C0_it**2 / avar_C + delta1**2


# ---------------------------------------------------------------------------
# factor-augmented regression


@dataclass(frozen=True)
class RegressionResult:
    alpha_ols: np.ndarray
    alpha_ridge: np.ndarray
    fitted: np.ndarray
    retained: np.ndarray
    kappa: float


def regress(y, fit: FactorFit, kappa: float = 0.0) -> RegressionResult:
    """OLS and ridge coefficients of ``y`` on the retained factors.

    The ridge solution is obtained from the OLS one without refitting:
    with ``F'F/T = diag(g)``, ``alpha_ridge = (g + kappa/T)^{-1} g alpha_ols``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != fit.T:
        raise ValidationError(f"y has {y.size} observations, factors have {fit.T}")
    if kappa < 0:
        raise ValidationError(f"kappa must be nonnegative, got {kappa}")
    F = fit.F
    g_all = np.einsum("ti,ti->i", F, F) / fit.T
    keep = np.flatnonzero(g_all > 1e-14 * max(1.0, g_all.max(initial=0.0)))
    if keep.size == 0:
        raise ValidationError("fit has no retained factors")
    Fk = F[:, keep]
    G = Fk.T @ Fk
    alpha = np.linalg.lstsq(Fk, y, rcond=None)[0]
    off = G - np.diag(np.diag(G))
    if np.all(np.abs(off) <= 1e-10 * np.abs(np.diag(G)).max()):
        g = np.diag(G) / fit.T
        ridge = g / (g + kappa / fit.T) * alpha
    else:
        ridge = np.linalg.solve(G + kappa * np.eye(keep.size), Fk.T @ y)
    return RegressionResult(alpha, ridge, Fk @ alpha, keep, float(kappa))
