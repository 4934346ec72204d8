"""Principal component estimators of the approximate factor model.

All estimators take :class:`~factorkit.panel.ScaledData` and return a
:class:`FactorFit` holding factors and loadings for ``Z`` (``F_z``,
``Lambda_z``). The accessors ``F = sqrt(T) F_z`` and
``Lambda = sqrt(N) Lambda_z`` give the estimates in the units of ``X``.

Normalizations (``d`` are the singular values of ``Z``):

* APC: ``F'F/T = I_r``, ``Lambda'Lambda/N = diag(d^2)``
* PC:  ``F'F/T = Lambda'Lambda/N = diag(d)``
* RPC: ``F'F/T = Lambda'Lambda/N = diag((d - gamma)_+)``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LinearSolveError, ValidationError
from .panel import ScaledData, StandardizationInfo
from .svdcore import PartialSvd, _fix_signs, soft_threshold, top_k_svd

APC = "APC"
PC = "PC"
RPC = "RPC"
RPC_GENERAL = "RPC_GENERAL"
CONSTRAINED = "CONSTRAINED"

SVD_TOL = 1e-12
SVD_MAX_ITER = 2000
ZERO_TOL = 1e-14


@dataclass
class FactorFit:
    F_z: np.ndarray
    Lambda_z: np.ndarray
    d: np.ndarray
    T: int
    N: int
    method: str
    gamma1: float = 0.0
    gamma2: float = 0.0
    converged: bool = True
    iterations: int = 0
    degenerate: bool = False
    U: np.ndarray | None = None
    V: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.F_z.shape[1]

    @property
    def F(self) -> np.ndarray:
        return math.sqrt(self.T) * self.F_z

    @property
    def Lambda(self) -> np.ndarray:
        return math.sqrt(self.N) * self.Lambda_z

    @property
    def gamma(self) -> float:
        """Effective threshold applied to the singular values."""
        return math.sqrt(self.gamma1 * self.gamma2)

    @property
    def d_gamma(self) -> np.ndarray:
        """Singular values after thresholding (equal to ``d`` when unregularized)."""
        return soft_threshold(self.d, self.gamma)

    @property
    def delta(self) -> np.ndarray:
        """Diagonal of the shrinkage matrix ``sqrt((d - gamma)_+ / d)``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.sqrt(np.where(self.d > 0, self.d_gamma / self.d, 0.0))
        return out

    @property
    def effective_rank(self) -> int:
        g = np.diag(self.F.T @ self.F) / self.T
        return int(np.count_nonzero(g > 1e-14 * max(1.0, g.max(initial=0.0))))

    def retained(self) -> "FactorFit":
        """Copy keeping only the factors with positive thresholded singular value."""
        keep = self.d_gamma > 0 if self.method != APC else self.d > 0
        sub = lambda a: None if a is None else a[:, keep]
        return FactorFit(
            self.F_z[:, keep], self.Lambda_z[:, keep], self.d[keep], self.T, self.N, self.method,
            self.gamma1, self.gamma2, self.converged, self.iterations, self.degenerate,
            sub(self.U), sub(self.V), dict(self.extras),
        )


@dataclass(frozen=True)
class CommonComponent:
    C: np.ndarray

    def rank(self, tol: float = 1e-8) -> int:
        s = np.linalg.svd(self.C, compute_uv=False)
        return int(np.count_nonzero(s > tol * max(1.0, s[0] if s.size else 0.0)))


def _check_r(Z: ScaledData, r: int) -> int:
    r = int(r)
    if not 1 <= r <= min(Z.T, Z.N):
        raise ValidationError(f"r={r} must lie in [1, min(T, N)={min(Z.T, Z.N)}]")
    return r


def _svd(Z: ScaledData, r: int, seed: int = 0, svd: PartialSvd | None = None) -> PartialSvd:
    if svd is not None and svd.k >= r:
        return PartialSvd(svd.U[:, :r], svd.d[:r], svd.V[:, :r], svd.converged, svd.iterations,
                          svd.degenerate, svd.ties)
    return top_k_svd(Z.Z, r, tol=SVD_TOL, max_iter=SVD_MAX_ITER, seed=seed)


def apc(Z: ScaledData, r: int, *, seed: int = 0, svd: PartialSvd | None = None) -> FactorFit:
    """Asymptotic principal components: ``F = sqrt(T) U_r``, ``Lambda = X'F/T``."""
    r = _check_r(Z, r)
    p = _svd(Z, r, seed, svd)
    return FactorFit(p.U.copy(), p.V * p.d, p.d, Z.T, Z.N, APC,
                     converged=p.converged, degenerate=p.degenerate, U=p.U, V=p.V)


def pc(Z: ScaledData, r: int, *, seed: int = 0, svd: PartialSvd | None = None) -> FactorFit:
    """Principal components with ``F'F/T = Lambda'Lambda/N = diag(d)``."""
    r = _check_r(Z, r)
    p = _svd(Z, r, seed, svd)
    root = np.sqrt(p.d)
    return FactorFit(p.U * root, p.V * root, p.d, Z.T, Z.N, PC, converged=p.converged,
                     degenerate=bool(p.degenerate or p.d[-1] <= ZERO_TOL * max(1.0, p.d[0])),
                     U=p.U, V=p.V)


def rpc_closed_form(Z: ScaledData, r: int, gamma: float, *, seed: int = 0,
                    svd: PartialSvd | None = None) -> FactorFit:
    """Rank-regularized principal components from the SVD of ``Z``.

    Minimizes ``0.5 (||Z - F Lambda'||^2 + gamma ||F||^2 + gamma ||Lambda||^2)``
    with ``F = U_r (D - gamma)_+^{1/2}`` and ``Lambda = V_r (D - gamma)_+^{1/2}``.
    """
    r = _check_r(Z, r)
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    p = _svd(Z, r, seed, svd)
    root = np.sqrt(soft_threshold(p.d, gamma))
    return FactorFit(p.U * root, p.V * root, p.d, Z.T, Z.N, RPC, gamma, gamma,
                     converged=p.converged, degenerate=p.degenerate, U=p.U, V=p.V)


def rpc_general(Z: ScaledData, r: int, gamma1: float, gamma2: float, *, seed: int = 0,
                svd: PartialSvd | None = None) -> FactorFit:
    """Solution with separate ridge penalties ``gamma1`` on F and ``gamma2`` on Lambda.

    The common component depends only on ``sqrt(gamma1 gamma2)``; the split
    rescales F by ``(gamma2/gamma1)^{1/4}`` and Lambda by the reciprocal.
    """
    r = _check_r(Z, r)
    if not (gamma1 > 0 and gamma2 > 0):
        raise ValidationError(f"gamma1 and gamma2 must be positive, got {gamma1}, {gamma2}")
    p = _svd(Z, r, seed, svd)
    root = np.sqrt(soft_threshold(p.d, math.sqrt(gamma1 * gamma2)))
    ratio = (gamma2 / gamma1) ** 0.25
    return FactorFit(ratio * p.U * root, p.V * root / ratio, p.d, Z.T, Z.N, RPC_GENERAL,
                     gamma1, gamma2, converged=p.converged, degenerate=p.degenerate, U=p.U, V=p.V)


def rpc_objective(Z, F_z, Lambda_z, gamma1: float, gamma2: float | None = None) -> float:
    """``0.5 ||Z - F Lambda'||^2 + gamma1/2 ||F||^2 + gamma2/2 ||Lambda||^2`` on the Z scale."""
    Z = Z.Z if isinstance(Z, ScaledData) else Z
    gamma2 = gamma1 if gamma2 is None else gamma2
    R = Z - F_z @ Lambda_z.T
    return float(0.5 * (np.sum(R * R) + gamma1 * np.sum(F_z * F_z) + gamma2 * np.sum(Lambda_z * Lambda_z)))


def _ridge_right(A, B, gamma):
    """``A B (B'B + gamma I)^{-1}``."""
    G = B.T @ B + gamma * np.eye(B.shape[1])
    try:
        return np.linalg.solve(G, (A @ B).T).T
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError("ridge normal equations are singular; use gamma > 0 or a smaller r") from exc


def algorithm_rpc(Z: ScaledData, r: int, gamma: float, *, tol: float = 1e-12, max_iter: int = 20000,
                  seed: int = 0) -> FactorFit:
    """Robust principal components by iterated ridge regressions.

    Each sweep solves for the loadings given the factors, orthogonalizes
    them with an SVD, solves for the factors given the loadings and
    orthogonalizes again. Sweeps stop when the relative change in
    ``F Lambda'`` drops below ``tol``. A cleanup step then takes the SVD of
    ``Z U_Lambda`` to refine the singular vectors and thresholds the
    singular values explicitly.
    """
    r = _check_r(Z, r)
    if gamma < 0:
        raise ValidationError(f"gamma must be nonnegative, got {gamma}")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    Zm = Z.Z
    rng = np.random.default_rng(seed)
    F, _ = np.linalg.qr(rng.standard_normal((Z.T, r)))
    floor = 1e-8 * np.linalg.norm(Zm)

    C_prev = None
    converged = False
    it = 0
    U_lam = None
    Lam = None
    for it in range(1, max_iter + 1):
        Lt = _ridge_right(Zm.T, F, gamma)
        U_lam, s_lam, _ = np.linalg.svd(Lt, full_matrices=False)
        Lam = U_lam * s_lam
        Ft = _ridge_right(Zm, Lam, gamma)
        U_f, s_f, Vt_f = np.linalg.svd(Ft, full_matrices=False)
        F = U_f * s_f
        Lam = Lam @ Vt_f.T  # keeps F Lam' equal to Ft Lam'
        C = F @ Lam.T
        if C_prev is not None:
            change = np.linalg.norm(C - C_prev) / max(np.linalg.norm(C), floor)
            if change < tol:
                converged = True
                break
        C_prev = C

    # cleanup: refine singular vectors from Z U_Lambda and threshold
    W, d, Vt = np.linalg.svd(Zm @ U_lam, full_matrices=False)
    V = U_lam @ Vt.T
    W, V = _fix_signs(W, V)
    root = np.sqrt(soft_threshold(d, gamma))
    return FactorFit(W * root, V * root, d, Z.T, Z.N, RPC, gamma, gamma, converged=converged,
                     iterations=it, U=W, V=V, extras={"pre_cleanup": (F, Lam)})


def common_component(fit: FactorFit, scale_back: StandardizationInfo | None = None) -> CommonComponent:
    """``C = F Lambda'`` in the units of ``X``; de-standardized when ``scale_back`` is given."""
    C = math.sqrt(fit.T * fit.N) * (fit.F_z @ fit.Lambda_z.T)
    if scale_back is not None:
        if np.size(scale_back.means) != fit.N:
            raise ValidationError(
                f"standardization has {np.size(scale_back.means)} series, fit has {fit.N}"
            )
        C = scale_back.invert(C)
    return CommonComponent(C)


def estimate(Z: ScaledData, r: int, method: str = "pc", gamma: float = 0.0, *, seed: int = 0) -> FactorFit:
    """Dispatch on a method name: ``apc``, ``pc`` or ``rpc``."""
    method = method.lower()
    if method == "apc":
        return apc(Z, r, seed=seed)
    if method == "pc":
        return pc(Z, r, seed=seed)
    if method == "rpc":
        return rpc_closed_form(Z, r, gamma, seed=seed)
    raise ValidationError(f"unknown method {method!r}")
