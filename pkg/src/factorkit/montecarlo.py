"""Simulated factor panels with sparse outliers, and replication sweeps.

Two designs with ``r = 5`` factors:

* ``DGP1``: Gaussian factors and loadings.
* ``DGP2``: orthonormal singular vectors from a Gaussian matrix with
  singular values ``(1, .8, .5, .3, .2 theta)``, scaled so the common
  component has the same order of magnitude as unit-variance noise.

Outliers ``N(mu, omega^2)`` sit on a grid of ``ceil(kappa_N N)`` units by
``ceil(kappa_T T)`` periods.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .estimators import pc, rpc_closed_form
from .panel import Panel, prepare
from .selection import DEFAULT_GAMMA, DEFAULT_RMAX, select_from_singular_values
from .svdcore import PartialSvd, _fix_signs

DGP1 = "DGP1"
DGP2 = "DGP2"
DGP2_SINGULAR_VALUES = (1.0, 0.8, 0.5, 0.3, 0.2)
RSTAR_SHARE = 0.05
THREADS_ENV = "FACTORKIT_THREADS"
BUNDLED_GRIDS = ("table1", "table2")


@dataclass(frozen=True)
class DgpConfig:
    dgp: str = DGP1
    N: int = 100
    T: int = 100
    r: int = 5
    omega: float = 0.0
    mu: float = 5.0
    kappa_N: float = 0.1
    kappa_T_frac: float = 0.03
    theta: float = 1.0
    outliers_on: bool = False
    per_unit_periods: bool = False

    def __post_init__(self):
        if self.dgp not in (DGP1, DGP2):
            raise ValidationError(f"unknown dgp {self.dgp!r}")
        if self.N < 2 or self.T < 2:
            raise ValidationError(f"N and T must be at least 2, got N={self.N}, T={self.T}")
        if not 1 <= self.r <= min(self.N, self.T):
            raise ValidationError(f"r={self.r} out of range")
        if self.dgp == DGP2 and self.r != len(DGP2_SINGULAR_VALUES):
            raise ValidationError("DGP2 has exactly 5 factors")
        if not (0 <= self.kappa_N <= 1 and 0 <= self.kappa_T_frac <= 1):
            raise ValidationError("outlier fractions must lie in [0, 1]")
        if self.omega < 0:
            raise ValidationError(f"omega must be nonnegative, got {self.omega}")
        if self.outliers_on and (math.ceil(self.kappa_N * self.N) == 0 or math.ceil(self.kappa_T_frac * self.T) == 0):
            raise ValidationError("outliers requested but the contaminated grid is empty")

    @classmethod
    def from_dict(cls, data: dict) -> "DgpConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValidationError(f"unknown config field(s): {sorted(unknown)}")
        out = {}
        for k, v in data.items():
            if k in ("N", "T", "r"):
                out[k] = int(v)
            elif k in ("outliers_on", "per_unit_periods"):
                out[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes")
            elif k == "dgp":
                out[k] = str(v).upper()
            else:
                out[k] = float(v)
        return cls(**out)


@dataclass(frozen=True)
class SimTruth:
    F0: np.ndarray
    Lambda0: np.ndarray
    C0: np.ndarray
    S: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class SimMetrics:
    C_r_total: float
    C_r_smallest: float
    c_S: float
    r_star: int
    r_hat: int
    r_bar: int
    R2_hat: float | None
    R2_bar: float | None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate(config: DgpConfig, seed=0) -> tuple[Panel, SimTruth]:
    """Draw one panel ``X = C0 + e + S``; ``seed`` may be an int, SeedSequence or Generator."""
    rng = _rng(seed)
    N, T, r = config.N, config.T, config.r
    if config.dgp == DGP1:
        F0 = rng.standard_normal((T, r))
        L0 = rng.standard_normal((N, r))
    else:
        G = rng.standard_normal((T, N))
        U, _, Vt = np.linalg.svd(G, full_matrices=False)
        D = np.array(DGP2_SINGULAR_VALUES)
        D[-1] *= config.theta
        F0 = math.sqrt(T) * U[:, :r] * np.sqrt(D)
        L0 = math.sqrt(N) * Vt[:r].T * np.sqrt(D)
    C0 = F0 @ L0.T
    e = rng.standard_normal((T, N))
    S = np.zeros((T, N))
    if config.outliers_on:
        n_units = math.ceil(config.kappa_N * N)
        n_periods = math.ceil(config.kappa_T_frac * T)
        units = rng.choice(N, n_units, replace=False)
        if config.per_unit_periods:
            for u in units:
                periods = rng.choice(T, n_periods, replace=False)
                S[periods, u] = rng.normal(config.mu, config.omega, n_periods)
        else:
            periods = rng.choice(T, n_periods, replace=False)
            S[np.ix_(periods, units)] = rng.normal(config.mu, config.omega, (n_periods, n_units))
    X = C0 + e + S
    return Panel.from_array(X), SimTruth(F0, L0, C0, S, e)


def low_rank_svd(F0: np.ndarray, L0: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of ``F0 L0'`` through the QR factors of each side."""
    Qf, Rf = np.linalg.qr(F0)
    Ql, Rl = np.linalg.qr(L0)
    u, s, vt = np.linalg.svd(Rf @ Rl.T)
    return Qf @ u, s, Ql @ vt.T


def r_star(singular_values, share: float = RSTAR_SHARE) -> int:
    """Number of components whose squared singular value exceeds ``share`` of the total."""
    d2 = np.asarray(singular_values, dtype=float) ** 2
    total = d2.sum()
    if total <= 0:
        return 0
    return int(np.count_nonzero(d2 / total > share))


def spanning_r2(y: np.ndarray, basis: np.ndarray) -> float:
    """Centered R^2 of ``y`` regressed on a constant and ``basis``."""
    Xr = np.column_stack([np.ones(y.size), basis])
    beta = np.linalg.lstsq(Xr, y, rcond=None)[0]
    resid = y - Xr @ beta
    tss = np.sum((y - y.mean()) ** 2)
    return float(1.0 - resid @ resid / tss) if tss > 0 else 1.0


def evaluate(panel: Panel, truth: SimTruth, gamma: float = DEFAULT_GAMMA,
             rmax: int = DEFAULT_RMAX) -> SimMetrics:
    """Selection and factor-space diagnostics for one simulated panel.

    The spanning R^2 regresses the last estimated factor (PC with ``r_hat``
    factors, RPC with ``r_bar``) on the top ``r*`` left singular vectors of
    the true common component. It is None when the selected count is zero.
    """
    X = panel.values
    var_x = float(np.var(X))
    Uc, dc, Vc = low_rank_svd(truth.F0, truth.Lambda0)
    rs = r_star(dc)
    last = dc.size - 1
    smallest = np.outer(Uc[:, last] * dc[last], Vc[:, last])

    Z = prepare(panel)
    U, d, Vt = np.linalg.svd(Z.Z, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    k = min(rmax, d.size)
    sel = select_from_singular_values(d[:k], Z.N, Z.T, k, gamma, Z.frobenius_sq)
    full = PartialSvd(U[:, :k], d[:k], V[:, :k])

    basis = Uc[:, :rs]
    R2_hat = R2_bar = None
    if sel.r_hat > 0 and rs > 0:
        fit = pc(Z, sel.r_hat, svd=full)
        R2_hat = spanning_r2(fit.F[:, -1], basis)
    if sel.r_bar > 0 and rs > 0:
        fit = rpc_closed_form(Z, sel.r_bar, gamma, svd=full)
        R2_bar = spanning_r2(fit.F[:, -1], basis)
    return SimMetrics(
        C_r_total=float(np.var(truth.C0)) / var_x,
        C_r_smallest=float(np.var(smallest)) / var_x,
        c_S=float(np.var(truth.S)) / var_x,
        r_star=rs,
        r_hat=sel.r_hat,
        r_bar=sel.r_bar,
        R2_hat=R2_hat,
        R2_bar=R2_bar,
    )


# ---------------------------------------------------------------------------
# sweeps

ROW_FIELDS = (
    "dgp", "N", "T", "r_star", "omega", "theta", "outliers_on",
    "C_r_total", "C_r_smallest", "c_S",
    "mean_r_hat", "mean_r_bar",
    "prob_r_hat_eq_r", "prob_r_bar_eq_r",
    "prob_r_hat_eq_rstar", "prob_r_bar_eq_rstar",
    "R2_hat", "R2_bar", "reps",
)


def replication_seed(seed: int, config_index: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(config_index, rep))


def run_config(config: DgpConfig, config_index: int, reps: int, gamma: float, rmax: int,
               seed: int) -> list[SimMetrics]:
    out = []
    for rep in range(reps):
        panel, truth = generate(config, replication_seed(seed, config_index, rep))
        out.append(evaluate(panel, truth, gamma, rmax))
    return out


def _run_config_star(args):
    return run_config(*args)


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(config: DgpConfig, metrics: Sequence[SimMetrics]) -> dict:
    """Average a list of replications into one table row."""
    rh = np.array([m.r_hat for m in metrics])
    rb = np.array([m.r_bar for m in metrics])
    rs = np.array([m.r_star for m in metrics])
    return {
        "dgp": config.dgp,
        "N": config.N,
        "T": config.T,
        "r_star": float(rs.mean()),
        "omega": config.omega,
        "theta": config.theta,
        "outliers_on": config.outliers_on,
        "C_r_total": float(np.mean([m.C_r_total for m in metrics])),
        "C_r_smallest": float(np.mean([m.C_r_smallest for m in metrics])),
        "c_S": float(np.mean([m.c_S for m in metrics])),
        "mean_r_hat": float(rh.mean()),
        "mean_r_bar": float(rb.mean()),
        "prob_r_hat_eq_r": float(np.mean(rh == config.r)),
        "prob_r_bar_eq_r": float(np.mean(rb == config.r)),
        "prob_r_hat_eq_rstar": float(np.mean(rh == rs)),
        "prob_r_bar_eq_rstar": float(np.mean(rb == rs)),
        "R2_hat": _mean_or_none(m.R2_hat for m in metrics),
        "R2_bar": _mean_or_none(m.R2_bar for m in metrics),
        "reps": len(metrics),
    }


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def sweep(grid: Sequence[DgpConfig], reps: int = 200, gamma: float = DEFAULT_GAMMA,
          rmax: int = DEFAULT_RMAX, seed: int = 0, workers: int | None = None) -> list[dict]:
    """Replicate every configuration and return one averaged row per config.

    Replication ``rep`` of config ``c`` draws from ``SeedSequence(seed,
    spawn_key=(c, rep))``, so output does not depend on the worker count.
    """
    if reps < 1:
        raise ValidationError(f"reps must be at least 1, got {reps}")
    workers = worker_count() if workers is None else max(1, int(workers))
    jobs = [(cfg, idx, reps, gamma, rmax, seed) for idx, cfg in enumerate(grid)]
    if workers == 1 or len(jobs) == 1:
        results = [_run_config_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_config_star, jobs))
    return [summarize(cfg, res) for cfg, res in zip(grid, results)]


# ---------------------------------------------------------------------------
# grids and output


def load_grid(source) -> list[DgpConfig]:
    """Load a grid from a bundled name (``table1``, ``table2``), a JSON file or a CSV file.

    JSON is either a list of config objects or ``{"configs": [...]}``; CSV
    has one config per row with field names in the header.
    """
    text = None
    if isinstance(source, str) and source in BUNDLED_GRIDS:
        text = resources.files("factorkit.data").joinpath(f"{source}.json").read_text()
        suffix = ".json"
    else:
        path = Path(source)
        if not path.exists():
            raise ValidationError(f"no such grid file: {path}")
        suffix = path.suffix.lower()
        text = path.read_text()
    if suffix == ".csv":
        rows = list(csv.DictReader(text.splitlines()))
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid grid JSON: {exc}") from exc
        rows = data["configs"] if isinstance(data, dict) else data
    return [DgpConfig.from_dict(dict(row)) for row in rows]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_table(rows: Sequence[dict], path=None) -> str:
    """Render rows as CSV in a fixed column order; also write to ``path`` if given."""
    lines = [",".join(ROW_FIELDS)]
    lines += [",".join(_fmt(row[k]) for k in ROW_FIELDS) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def config_to_dict(config: DgpConfig) -> dict:
    return asdict(config)
