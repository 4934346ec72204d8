"""Panel ingestion, transformation, standardization and scaling.

A panel is a T x N matrix (rows are periods, columns are series) with a
boolean mask marking observed cells. Estimators work on the scaled matrix
``Z = X / sqrt(N T)`` of a complete, standardized panel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, PreconditionError, ValidationError

POPULATION = "population"
SAMPLE = "sample"
DEFAULT_MISSING_TOKENS = ("", "NA", "NaN")

# transform code -> number of leading rows consumed
_TRANSFORM_LAGS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


@dataclass(frozen=True)
class Panel:
    """Raw observations with a missing-value mask.

    ``values`` may hold anything (typically NaN) where ``mask`` is False;
    those cells are never read by the estimators.
    """

    values: np.ndarray
    mask: np.ndarray
    series_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValidationError(f"panel values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValidationError(f"mask shape {mask.shape} does not match values {values.shape}")
        T, N = values.shape
        if T < 2 or N < 2:
            raise ValidationError(f"panel must have T >= 2 and N >= 2, got T={T}, N={N}")
        names = list(self.series_names) if self.series_names else [f"x{j + 1}" for j in range(N)]
        if len(names) != N:
            raise ValidationError(f"{len(names)} series names for {N} columns")
        counts = mask.sum(axis=0)
        for j in np.flatnonzero(counts < 2):
            raise ValidationError(
                f"column {names[j]!r} has {counts[j]} observed value(s); at least 2 are required"
            )
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "series_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    @classmethod
    def from_array(cls, X, series_names: Sequence[str] | None = None) -> "Panel":
        """Build a panel from an array, treating NaN cells as missing."""
        X = np.asarray(X, dtype=float)
        return cls(values=X, mask=~np.isnan(X), series_names=list(series_names or []))

    def observed_values(self, fill: float = np.nan) -> np.ndarray:
        """Copy of ``values`` with unobserved cells replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def select_columns(self, idx) -> "Panel":
        idx = np.asarray(idx)
        names = [self.series_names[j] for j in idx]
        return Panel(self.values[:, idx], self.mask[:, idx], names)


@dataclass(frozen=True)
class StandardizationInfo:
    means: np.ndarray
    sds: np.ndarray
    variance_convention: str = POPULATION

    def __post_init__(self):
        if np.any(~(np.asarray(self.sds) > 0)):
            raise ValidationError("standard deviations must be strictly positive")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.means) / self.sds

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.sds + self.means


@dataclass(frozen=True)
class ScaledData:
    """The matrix ``Z = X / sqrt(N T)`` fed to every estimator."""

    Z: np.ndarray
    T: int
    N: int
    scale: float
    series_names: list[str] = field(default_factory=list)
    standardization: StandardizationInfo | None = None

    @property
    def X(self) -> np.ndarray:
        """The (standardized) data in original row/column units."""
        return self.Z * self.scale

    @property
    def frobenius_sq(self) -> float:
        return float(np.sum(self.Z * self.Z))

    @classmethod
    def from_array(cls, X, series_names: Sequence[str] | None = None) -> "ScaledData":
        """Scale a complete array as-is (no standardization)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValidationError(f"expected a 2-D array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise PreconditionError("array contains non-finite values; impute missing cells first")
        T, N = X.shape
        s = math.sqrt(N * T)
        return cls(X / s, T, N, s, list(series_names or [f"x{j + 1}" for j in range(N)]))


# ---------------------------------------------------------------------------
# ingestion


def ingest_csv(
    path,
    *,
    delimiter: str = ",",
    header: bool = True,
    missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS,
    transform_row: bool = False,
) -> Panel | tuple[Panel, list[int]]:
    """Read a rectangular numeric CSV into a :class:`Panel`.

    Missing tokens are matched case-insensitively after stripping
    whitespace. With ``transform_row=True`` the row after the header holds
    integer transform codes and ``(panel, codes)`` is returned.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    tokens = {t.strip().lower() for t in missing_tokens}
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    if not rows:
        raise ParseError(f"{path}: file is empty")

    names = None
    start = 0
    if header:
        names = [c.strip() for c in rows[0]]
        start = 1
    codes = None
    if transform_row:
        if start >= len(rows):
            raise ParseError(f"{path}: missing transform-code row")
        try:
            codes = [int(float(c)) for c in rows[start]]
        except ValueError as exc:
            raise ParseError(f"{path}: row {start + 1}: transform codes must be integers") from exc
        start += 1

    body = rows[start:]
    width = len(names) if names is not None else (len(body[0]) if body else 0)
    if codes is not None and len(codes) != width:
        raise ParseError(f"{path}: {len(codes)} transform codes for {width} columns")
    values = np.full((len(body), width), np.nan)
    mask = np.zeros((len(body), width), dtype=bool)
    for r, row in enumerate(body):
        line = start + r + 1
        if len(row) != width:
            raise ParseError(f"{path}: row {line} has {len(row)} fields, expected {width}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in tokens:
                continue
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {cell!r} at row {line}, column {c + 1}"
                ) from None
            mask[r, c] = True

    panel = Panel(values, mask, names or [])
    if transform_row:
        return panel, codes
    return panel


def read_transform_codes(path, series_names: Sequence[str]) -> list[int]:
    """Read a sidecar CSV of ``(series_name, code)`` pairs, ordered like ``series_names``."""
    mapping = {}
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            name, code = row[0].strip(), row[1].strip()
            try:
                mapping[name] = int(float(code))
            except ValueError:
                if not mapping:  # header line
                    continue
                raise ParseError(f"{path}: bad transform code {code!r} for {name!r}") from None
    missing = [n for n in series_names if n not in mapping]
    if missing:
        raise ValidationError(f"{path}: no transform code for series {missing}")
    return [mapping[n] for n in series_names]


def write_csv(path, values: np.ndarray, names: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.asarray(values):
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# transforms


def _transform_column(x: np.ndarray, code: int, name: str) -> np.ndarray:
    if code in (4, 5, 6):
        bad = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if bad.size:
            raise DomainError(
                f"log transform of nonpositive value {x[bad[0]]} in series {name!r} at row {bad[0] + 1}"
            )
        x = np.log(x)
    if code == 1 or code == 4:
        return x
    if code in (2, 5):
        return np.concatenate([[np.nan], np.diff(x)])
    if code in (3, 6):
        return np.concatenate([[np.nan, np.nan], np.diff(x, n=2)])
    # code 7: first difference of the period-on-period growth rate
    growth = np.concatenate([[np.nan], x[1:] / x[:-1] - 1.0])
    return np.concatenate([[np.nan], np.diff(growth)])


def apply_transforms(panel: Panel, codes: Sequence[int]) -> Panel:
    """Apply FRED-MD style transform codes column by column.

    Codes: 1 level, 2 first difference, 3 second difference, 4 log,
    5 log first difference, 6 log second difference, 7 first difference of
    the growth rate. Leading rows consumed by the largest lag are dropped
    from every column so the panel stays rectangular.
    """
    codes = [int(c) for c in codes]
    if len(codes) != panel.N:
        raise ValidationError(f"{len(codes)} transform codes for {panel.N} series")
    for name, c in zip(panel.series_names, codes):
        if c not in _TRANSFORM_LAGS:
            raise ValidationError(f"transform code {c} for series {name!r} is not in 1..7")
    X = panel.observed_values()
    out = np.column_stack(
        [_transform_column(X[:, j], c, panel.series_names[j]) for j, c in enumerate(codes)]
    )
    drop = max(_TRANSFORM_LAGS[c] for c in codes)
    out = out[drop:]
    return Panel(out, ~np.isnan(out), panel.series_names)


# ---------------------------------------------------------------------------
# standardization and scaling


def column_stats(panel: Panel, convention: str = POPULATION) -> StandardizationInfo:
    if convention not in (POPULATION, SAMPLE):
        raise ValidationError(f"unknown variance convention {convention!r}")
    X = np.where(panel.mask, panel.values, 0.0)
    n = panel.mask.sum(axis=0)
    means = X.sum(axis=0) / n
    dev = np.where(panel.mask, panel.values - means, 0.0)
    ddof = 0 if convention == POPULATION else 1
    sds = np.sqrt((dev * dev).sum(axis=0) / (n - ddof))
    for j in np.flatnonzero(~(sds > 0)):
        raise ValidationError(f"column {panel.series_names[j]!r} has zero variance")
    return StandardizationInfo(means, sds, convention)


def standardize(panel: Panel, convention: str = POPULATION) -> tuple[Panel, StandardizationInfo]:
    """Demean and rescale every column over its observed entries."""
    info = column_stats(panel, convention)
    values = np.where(panel.mask, info.apply(np.where(panel.mask, panel.values, 0.0)), np.nan)
    return replace(panel, values=values), info


def scale(panel: Panel, standardization: StandardizationInfo | None = None) -> ScaledData:
    """Divide a complete panel by ``sqrt(N T)``."""
    if not panel.is_complete:
        T_idx, N_idx = np.nonzero(~panel.mask)
        raise PreconditionError(
            f"panel has {T_idx.size} unobserved cell(s) (first at row {T_idx[0] + 1}, "
            f"series {panel.series_names[N_idx[0]]!r}); impute before scaling"
        )
    s = math.sqrt(panel.N * panel.T)
    return ScaledData(panel.values / s, panel.T, panel.N, s, list(panel.series_names), standardization)


def prepare(panel: Panel, convention: str = POPULATION) -> ScaledData:
    """Standardize then scale; the usual entry point before estimation."""
    std, info = standardize(panel, convention)
    return scale(std, info)
