"""Linear restrictions ``R vec(Lambda) = phi`` on the loadings.

``vec`` stacks the columns of the N x r loading matrix, so entry ``(i, j)``
(0-based) sits at position ``j * N + i``. Restrictions are stated for the
loadings in data units; internally the scaled loadings satisfy
``R vec(Lambda_z) = phi / sqrt(N)``.

Restriction files are JSON with 1-based indices::

    {"r": 3, "constraints": [{"terms": [{"i": 1, "j": 2, "c": 1.0}], "phi": 0.0}]}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LinearSolveError, ParseError, ValidationError
from .estimators import CONSTRAINED, FactorFit, rpc_closed_form
from .panel import ScaledData

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RestrictionSet:
    """Sparse restriction list; ``entries`` hold 0-based ``(row, i, j, coefficient)``."""

    entries: tuple[tuple[int, int, int, float], ...]
    phi: np.ndarray
    N: int
    r: int

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).reshape(-1)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "entries", tuple((int(k), int(i), int(j), float(c)) for k, i, j, c in self.entries))
        m = phi.size
        for k, i, j, _ in self.entries:
            if not 0 <= k < m:
                raise ValidationError(f"constraint index {k + 1} out of range 1..{m}")
            if not 0 <= i < self.N:
                raise ValidationError(f"constraint {k + 1}: series index {i + 1} out of range 1..{self.N}")
            if not 0 <= j < self.r:
                raise ValidationError(f"constraint {k + 1}: factor index {j + 1} out of range 1..{self.r}")
        if m and m >= self.N * self.r:
            raise ValidationError(f"{m} restrictions leave no free loadings (N*r={self.N * self.r})")

    @property
    def m(self) -> int:
        return self.phi.size

    @classmethod
    def empty(cls, N: int, r: int) -> "RestrictionSet":
        return cls((), np.zeros(0), N, r)

    @classmethod
    def from_dict(cls, data: dict, N: int) -> "RestrictionSet":
        """Build from the JSON layout (1-based ``i``, ``j``)."""
        try:
            r = int(data["r"])
            entries = []
            phi = []
            for k, con in enumerate(data["constraints"]):
                for term in con["terms"]:
                    entries.append((k, int(term["i"]) - 1, int(term["j"]) - 1, float(term["c"])))
                phi.append(float(con.get("phi", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed restriction specification: {exc}") from exc
        return cls(tuple(entries), np.array(phi), N, r)

    @classmethod
    def load(cls, path, N: int) -> "RestrictionSet":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ValidationError(f"cannot read restriction file {path}: {exc}") from exc
        return cls.from_dict(data, N)

    def to_dict(self) -> dict:
        cons = [{"terms": [], "phi": float(p)} for p in self.phi]
        for k, i, j, c in self.entries:
            cons[k]["terms"].append({"i": i + 1, "j": j + 1, "c": c})
        return {"r": self.r, "constraints": cons}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def matrix(self) -> np.ndarray:
        """Dense ``m x (N r)`` restriction matrix."""
        R = np.zeros((self.m, self.N * self.r))
        for k, i, j, c in self.entries:
            R[k, j * self.N + i] += c
        return R

    def check_rank(self) -> np.ndarray:
        """Return ``R`` after verifying full row rank; names dependent rows otherwise."""
        R = self.matrix()
        if self.m == 0:
            return R
        s = np.linalg.svd(R, compute_uv=False)
        if s[-1] > RANK_TOL * s[0]:
            return R
        dependent = []
        kept = np.zeros((0, R.shape[1]))
        for k in range(self.m):
            trial = np.vstack([kept, R[k]])
            sv = np.linalg.svd(trial, compute_uv=False)
            if sv[-1] > RANK_TOL * max(sv[0], 1e-300):
                kept = trial
            else:
                dependent.append(k + 1)
        raise ValidationError(f"restriction matrix is rank deficient; dependent constraint(s): {dependent}")

    def residual(self, Lambda: np.ndarray) -> float:
        """``||R vec(Lambda) - phi||_inf`` for loadings in data units."""
        if self.m == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix() @ vec(Lambda) - self.phi)))


@dataclass
class ConstrainedFit(FactorFit):
    restrictions: RestrictionSet | None = None
    constraint_residual: float = 0.0
    history: list = field(default_factory=list)


def vec(A: np.ndarray) -> np.ndarray:
    return np.asarray(A).reshape(-1, order="F")


def unvec(v: np.ndarray, N: int, r: int) -> np.ndarray:
    return np.asarray(v).reshape((N, r), order="F")


def _gram(M: np.ndarray, gamma: float) -> np.ndarray:
    return M.T @ M + gamma * np.eye(M.shape[1])


def _solve(A, B, what):
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(f"singular system in {what}") from exc


def f_update(Z: ScaledData, Lambda: np.ndarray, gamma: float) -> np.ndarray:
    """``F = Z Lambda (Lambda'Lambda + gamma I)^{-1}`` (scaled units)."""
    return _solve(_gram(Lambda, gamma), (Z.Z @ Lambda).T, "factor update").T


def _unrestricted_lambda(Z: ScaledData, F: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    G = _gram(F, gamma)
    return _solve(G, (Z.Z.T @ F).T, "loading update").T, G


def lambda_update_penalized(Z: ScaledData, F: np.ndarray, gamma: float, tau: float,
                            restrictions: RestrictionSet) -> np.ndarray:
    """Loadings under the quadratic penalty ``tau ||R vec(Lambda) - phi||^2`` (scaled units)."""
    if not (tau >= 0 and math.isfinite(tau)):
        raise ValidationError(f"tau must be finite and nonnegative, got {tau}")
    L0, G = _unrestricted_lambda(Z, F, gamma)
    if tau == 0 or restrictions.m == 0:
        return L0
    N, r = L0.shape
    R = restrictions.matrix()
    phi_z = restrictions.phi / math.sqrt(Z.N)
    A = np.kron(G, np.eye(N)) + tau * R.T @ R
    b = vec(Z.Z.T @ F) + tau * R.T @ phi_z
    return unvec(_solve(A, b, "penalized loading update"), N, r)


def lambda_update_exact(Z: ScaledData, F: np.ndarray, gamma: float,
                        restrictions: RestrictionSet) -> np.ndarray:
    """Loadings satisfying the restrictions exactly, by projecting the ridge solution.

    Only the m x m system ``R (G^{-1} kron I) R'`` is solved densely, with
    ``G = F'F + gamma I``.
    """
    L0, G = _unrestricted_lambda(Z, F, gamma)
    if restrictions.m == 0:
        return L0
    N, r = L0.shape
    if (N, r) != (restrictions.N, restrictions.r):
        raise ValidationError(
            f"restrictions are for N={restrictions.N}, r={restrictions.r}; loadings are {N}x{r}"
        )
    R = restrictions.check_rank()
    m = restrictions.m
    Ginv = _solve(G, np.eye(r), "loading update")
    # (G^{-1} kron I_N) R' without forming the Kronecker product
    Rm = R.reshape(m, r, N)
    AR = np.einsum("kji,jl->kli", Rm, Ginv).reshape(m, r * N)
    S = R @ AR.T
    phi_z = restrictions.phi / math.sqrt(Z.N)
    y = _solve(S, R @ vec(L0) - phi_z, "restriction projection")
    return unvec(vec(L0) - AR.T @ y, N, r)


def constrained_fit(Z: ScaledData, r: int, gamma: float, restrictions: RestrictionSet, *,
                    tol: float = 1e-8, max_iter: int = 10000, seed: int = 0) -> ConstrainedFit:
    """Alternate the factor and restricted-loading updates from the unrestricted solution.

    Stops when the change in ``F'F`` plus the change in ``Lambda'Lambda``
    (Frobenius, scaled units) is at most ``tol``.
    """
    if restrictions.r != r or restrictions.N != Z.N:
        raise ValidationError(
            f"restrictions are for N={restrictions.N}, r={restrictions.r}; data has N={Z.N}, r={r}"
        )
    start = rpc_closed_form(Z, r, gamma, seed=seed)
    F, L = start.F_z, start.Lambda_z
    converged = restrictions.m == 0
    it = 0
    history = []
    if restrictions.m:
        restrictions.check_rank()
        for it in range(1, max_iter + 1):
            L_new = lambda_update_exact(Z, F, gamma, restrictions)
            F_new = f_update(Z, L_new, gamma)
            if not (np.isfinite(F_new).all() and np.isfinite(L_new).all()):
                raise LinearSolveError(
                    f"constrained iteration diverged at step {it}; the restrictions likely force "
                    "rank-deficient loadings"
                )
            change = (np.linalg.norm(F_new.T @ F_new - F.T @ F)
                      + np.linalg.norm(L_new.T @ L_new - L.T @ L))
            history.append(float(change))
            F, L = F_new, L_new
            if change <= tol:
                converged = True
                break
    fit = ConstrainedFit(F, L, start.d, Z.T, Z.N, CONSTRAINED, gamma, gamma, converged, it,
                         start.degenerate, start.U, start.V, restrictions=restrictions, history=history)
    fit.constraint_residual = restrictions.residual(fit.Lambda)
    return fit
