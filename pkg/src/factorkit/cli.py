"""Command-line interface: ``factorkit <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 non-convergence (outputs are
still written and carry a flag).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import montecarlo
from .constraints import RestrictionSet, constrained_fit
from .errors import FactorKitError
from .estimators import FactorFit, estimate, rpc_general
from .imputation import em_impute
from .inference import regress
from .panel import (
    POPULATION,
    SAMPLE,
    Panel,
    apply_transforms,
    ingest_csv,
    prepare,
    read_transform_codes,
    write_csv,
)
from .selection import DEFAULT_GAMMA, DEFAULT_RMAX, ic_gap_decomposition, select

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGED = 3
RANK_TOL = 1e-8


class CliError(FactorKitError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_panel(args) -> Panel:
    if args.input is None:
        raise CliError("--input is required")
    if args.transform_row:
        panel, codes = ingest_csv(args.input, transform_row=True)
    else:
        panel, codes = ingest_csv(args.input), None
    if args.transform_codes:
        codes = read_transform_codes(args.transform_codes, panel.series_names)
    if codes is not None:
        panel = apply_transforms(panel, codes)
    return panel


def _out_dir(args) -> Path:
    if args.output is None:
        raise CliError("--output directory is required")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _numerical_rank(d) -> int:
    d = np.asarray(d)
    return int(np.count_nonzero(d > RANK_TOL * max(1.0, d[0] if d.size else 0.0)))


def _factor_names(r: int) -> list[str]:
    return [f"f{j + 1}" for j in range(r)]


def _write_fit(out: Path, fit: FactorFit, series, keep, extra: dict) -> None:
    write_csv(out / "factors.csv", fit.F[:, keep], _factor_names(len(keep)))
    L = fit.Lambda[:, keep]
    with (out / "loadings.csv").open("w") as fh:
        fh.write("series," + ",".join(_factor_names(len(keep))) + "\n")
        for name, row in zip(series, L):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
    d = fit.d
    dg = fit.d_gamma
    summary = {
        "schema": SCHEMA_VERSION,
        "method": fit.method,
        "gamma": fit.gamma,
        "gamma1": fit.gamma1,
        "gamma2": fit.gamma2,
        "r": fit.r,
        "T": fit.T,
        "N": fit.N,
        "d": d.tolist(),
        "d_gamma": dg.tolist(),
        "d_squared": (d * d).tolist(),
        "d_bar_squared": (dg * dg).tolist(),
        "r_star": int(len(keep)),
        "numerical_rank": _numerical_rank(d),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
    }
    summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    panel = _load_panel(args)
    Z = prepare(panel, args.variance)
    if args.r is None:
        raise CliError("--r is required")
    general = args.gamma1 is not None or args.gamma2 is not None
    if general:
        if args.method != "rpc" or args.gamma1 is None or args.gamma2 is None:
            raise CliError("--gamma1 and --gamma2 go together and need --method rpc")
        fit = rpc_general(Z, args.r, args.gamma1, args.gamma2, seed=args.seed)
    else:
        if args.method in ("pc", "apc") and args.gamma is not None:
            print(f"warning: --gamma is ignored with --method {args.method}", file=sys.stderr)
        gamma = (DEFAULT_GAMMA if args.gamma is None else args.gamma) if args.method == "rpc" else 0.0
        fit = estimate(Z, args.r, args.method, gamma, seed=args.seed)
    dg = fit.d_gamma
    keep = np.flatnonzero(dg > RANK_TOL * max(1.0, fit.d[0]))
    _write_fit(_out_dir(args), fit, Z.series_names, keep, {})
    return EXIT_OK


def cmd_select(args) -> int:
    panel = _load_panel(args)
    Z = prepare(panel, args.variance)
    gamma = DEFAULT_GAMMA if args.gamma is None else args.gamma
    rmax = DEFAULT_RMAX if args.rmax is None else args.rmax
    res = select(Z, rmax, gamma, seed=args.seed)
    gaps = ic_gap_decomposition(res)
    rows = [
        (int(k), res.ssr_plain[k], res.ssr_thresh[k], res.ic_plain[k], res.ic_thresh[k],
         gaps["gap"][k], gaps["approx"][k])
        for k in range(res.rmax + 1)
    ]
    header = ("k", "ssr_plain", "ssr_thresh", "ic_plain", "ic_thresh", "gap", "gap_approx")
    if args.format == "json":
        doc = {
            "schema": SCHEMA_VERSION,
            "N": res.N,
            "T": res.T,
            "rmax": res.rmax,
            "gamma": res.gamma,
            "r_hat": res.r_hat,
            "r_bar": res.r_bar,
            "ssr_floored": res.floored,
            "table": [dict(zip(header, (r[0],) + tuple(float(v) for v in r[1:]))) for r in rows],
        }
        _emit(json.dumps(doc, indent=2) + "\n", args.output)
    else:
        _emit(_csv_text(header, rows), args.output)
        print(f"r_hat={res.r_hat} r_bar={res.r_bar}", file=sys.stderr)
    return EXIT_OK


def cmd_constrain(args) -> int:
    panel = _load_panel(args)
    Z = prepare(panel, args.variance)
    if args.restrictions is None:
        raise CliError("--restrictions is required")
    rs = RestrictionSet.load(args.restrictions, Z.N)
    r = rs.r if args.r is None else args.r
    if r != rs.r:
        raise CliError(f"--r={r} disagrees with r={rs.r} in the restriction file")
    gamma = 0.0 if args.gamma is None else args.gamma
    kw = {} if args.max_iter is None else {"max_iter": args.max_iter}
    fit = constrained_fit(Z, r, gamma, rs, seed=args.seed, **kw)
    F, L = fit.F, fit.Lambda
    extra = {
        "constraint_residual": fit.constraint_residual,
        "n_restrictions": rs.m,
        "FtF_over_T": (F.T @ F / fit.T).tolist(),
        "LtL_over_N": (L.T @ L / fit.N).tolist(),
    }
    _write_fit(_out_dir(args), fit, Z.series_names, np.arange(r), extra)
    return EXIT_OK if fit.converged else EXIT_NONCONVERGED


def cmd_impute(args) -> int:
    panel = _load_panel(args)
    if args.output is None:
        raise CliError("--output file is required")
    kw = {} if args.max_iter is None else {"max_iter": args.max_iter}
    res = em_impute(panel, args.k, convention=args.variance, seed=args.seed, **kw)
    write_csv(args.output, res.completed.values, res.completed.series_names)
    report = {
        "schema": SCHEMA_VERSION,
        "k": res.k,
        "iterations": res.iterations,
        "converged": res.converged,
        "missing_cells": int((~panel.mask).sum()),
        "final_delta": res.delta_history[-1] if res.delta_history else 0.0,
    }
    print(json.dumps(report), file=sys.stdout)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    if args.input is None:
        raise CliError("--input must name a bundled grid (table1, table2) or a grid file")
    grid = montecarlo.load_grid(args.input)
    reps = 200 if args.reps is None else args.reps
    gamma = DEFAULT_GAMMA if args.gamma is None else args.gamma
    rmax = DEFAULT_RMAX if args.rmax is None else args.rmax
    rows = montecarlo.sweep(grid, reps, gamma, rmax, args.seed)
    if args.format == "json":
        _emit(json.dumps({"schema": SCHEMA_VERSION, "rows": rows}, indent=2) + "\n", args.output)
    else:
        _emit(montecarlo.write_table(rows), args.output)
    return EXIT_OK


def _read_target(path, T: int) -> np.ndarray:
    vals = []
    for line in Path(path).read_text().splitlines():
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        try:
            vals.append(float(cell))
        except ValueError:
            if vals:
                raise CliError(f"{path}: non-numeric target value {cell!r}") from None
    y = np.array(vals)
    if y.size != T:
        raise CliError(f"{path}: target has {y.size} values, panel has T={T}")
    return y


def cmd_regress(args) -> int:
    panel = _load_panel(args)
    Z = prepare(panel, args.variance)
    if args.target is None or args.r is None:
        raise CliError("--target and --r are required")
    if args.method in ("pc", "apc") and args.gamma is not None:
        print(f"warning: --gamma is ignored with --method {args.method}", file=sys.stderr)
    gamma = (DEFAULT_GAMMA if args.gamma is None else args.gamma) if args.method == "rpc" else 0.0
    fit = estimate(Z, args.r, args.method, gamma, seed=args.seed)
    y = _read_target(args.target, Z.T)
    res = regress(y, fit, 0.0 if args.kappa is None else args.kappa)
    rows = [(f"f{j + 1}", a, b) for j, a, b in zip(res.retained, res.alpha_ols, res.alpha_ridge)]
    if args.format == "json":
        doc = {"schema": SCHEMA_VERSION, "method": fit.method, "gamma": fit.gamma, "kappa": res.kappa,
               "coefficients": [{"factor": f, "alpha_ols": float(a), "alpha_ridge": float(b)} for f, a, b in rows]}
        _emit(json.dumps(doc, indent=2) + "\n", args.output)
    else:
        _emit(_csv_text(("factor", "alpha_ols", "alpha_ridge"), rows), args.output)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "select": cmd_select,
    "constrain": cmd_constrain,
    "impute": cmd_impute,
    "simulate": cmd_simulate,
    "regress": cmd_regress,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--method", choices=("apc", "pc", "rpc"), default="pc")
        p.add_argument("--gamma", type=float)
        p.add_argument("--gamma1", type=float)
        p.add_argument("--gamma2", type=float)
        p.add_argument("--r", type=int)
        p.add_argument("--rmax", type=int)
        p.add_argument("--kappa", type=float)
        p.add_argument("--restrictions")
        p.add_argument("--k", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--max-iter", dest="max_iter", type=int, help="iteration cap for constrain and impute")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--transform-codes", dest="transform_codes")
        p.add_argument("--transform-row", dest="transform_row", action="store_true",
                       help="the row after the header holds transform codes")
        p.add_argument("--variance", choices=(POPULATION, SAMPLE), default=POPULATION)
        p.add_argument("--target", help="single-column CSV with the regression target")
    return parser


def _validate(args) -> None:
    for flag in ("gamma", "gamma1", "gamma2", "kappa"):
        v = getattr(args, flag)
        if v is not None and v < 0:
            raise CliError(f"--{flag} must be nonnegative")
    for flag in ("r", "k", "reps", "max_iter"):
        v = getattr(args, flag)
        if v is not None and v < 1:
            raise CliError(f"--{flag.replace('_', '-')} must be at least 1")
    if args.rmax is not None and args.rmax < 0:
        raise CliError("--rmax must be nonnegative")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except (FactorKitError, ValueError, OSError) as exc:
        msg = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(msg), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
