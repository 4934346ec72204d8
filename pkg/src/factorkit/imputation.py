"""EM-style imputation of missing panel cells from a factor model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .estimators import common_component, pc
from .panel import POPULATION, Panel, column_stats, prepare, scale
from .selection import DEFAULT_GAMMA, DEFAULT_RMAX, select


@dataclass(frozen=True)
class ImputationResult:
    completed: Panel
    iterations: int
    k: int
    converged: bool
    delta_history: list = field(default_factory=list)


def _balanced_subpanel(panel: Panel) -> Panel:
    rows = panel.mask.all(axis=1)
    if rows.sum() >= 2:
        return Panel(panel.values[rows], panel.mask[rows], panel.series_names)
    cols = np.flatnonzero(panel.mask.all(axis=0))
    if cols.size >= 2:
        return panel.select_columns(cols)
    raise ValidationError("no balanced sub-panel to choose k from; pass k explicitly")


def choose_k(panel: Panel, rmax: int = DEFAULT_RMAX, gamma: float = DEFAULT_GAMMA,
             convention: str = POPULATION) -> int:
    """Plain-criterion factor count on the fully observed rows (or columns)."""
    sub = _balanced_subpanel(panel)
    Z = prepare(sub, convention)
    return max(1, select(Z, min(rmax, Z.T, Z.N), gamma).r_hat)


def em_impute(panel: Panel, k: int | None = None, tol: float = 1e-6, max_iter: int = 500,
              convention: str = POPULATION, seed: int = 0) -> ImputationResult:
    """Fill unobserved cells by iterating a ``k``-factor principal components fit.

    Missing cells start at their column means. Each iteration standardizes
    the completed panel, fits ``k`` factors and overwrites the missing
    cells with the de-standardized common component. ``delta_history``
    records the largest change on imputed cells in standardized units.
    """
    if k is None:
        k = choose_k(panel, convention=convention)
    k = int(k)
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    counts = panel.mask.sum(axis=0)
    for j in np.flatnonzero(counts < k + 1):
        raise ValidationError(
            f"column {panel.series_names[j]!r} has {counts[j]} observed value(s); k={k} needs at least {k + 1}"
        )
    if k > min(panel.T, panel.N):
        raise ValidationError(f"k={k} exceeds min(T, N)={min(panel.T, panel.N)}")

    mask = panel.mask
    original = panel.values
    means = np.where(mask, original, 0.0).sum(axis=0) / counts
    X = np.where(mask, original, means)
    missing = ~mask

    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        full = Panel(X, np.ones_like(mask), panel.series_names)
        info = column_stats(full, convention)
        Z = scale(Panel(info.apply(X), full.mask, panel.series_names), info)
        fit = pc(Z, k, seed=seed)
        C = common_component(fit, scale_back=info).C
        X_new = np.where(mask, original, C)
        delta = float(np.max(np.abs(X_new - X)[missing] / np.broadcast_to(info.sds, X.shape)[missing])) \
            if missing.any() else 0.0
        history.append(delta)
        X = X_new
        if delta < tol:
            converged = True
            break

    return ImputationResult(Panel(X, np.ones_like(mask), panel.series_names), it, k, converged, history)
