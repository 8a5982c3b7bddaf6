"""Command-line front end: estimate on CSV panels, run simulation grids, self-verify."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import differenced, gmm, levels, montecarlo, panel, selfcheck
from .errors import (
    InsufficientMomentsError,
    InsufficientPeriodsError,
    NotPositiveDefiniteError,
    ParseError,
    RankDeficientError,
    SingularHessianError,
    UnbalancedPanelError,
    UnsupportedLagOrderError,
)
from .results import fit_document

VALIDATION_ERRORS = (
    ParseError,
    UnbalancedPanelError,
    InsufficientPeriodsError,
    UnsupportedLagOrderError,
    InsufficientMomentsError,
    ValueError,
)
NUMERICAL_ERRORS = (
    NotPositiveDefiniteError,
    RankDeficientError,
    SingularHessianError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

ESTIMATE_CHOICES = (
    "lqml_ecme",
    "lqml_unrestricted",
    "dqml_x",
    "dqml_dx",
    "dqml_unrestricted",
    "dgmm",
    "sgmm",
)


def _env_float(name: str, fallback: float) -> float:
    raw = os.environ.get(name)
    return float(raw) if raw not in (None, "") else fallback


def _env_int(name: str, fallback: int) -> int:
    raw = os.environ.get(name)
    return int(raw) if raw not in (None, "") else fallback


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpqml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit one estimator to a CSV panel")
    est.add_argument("--input", required=True, help="long-format CSV path")
    est.add_argument("--estimator", required=True, choices=ESTIMATE_CHOICES)
    est.add_argument("--lags", type=int, default=1, help="autoregressive order p")
    est.add_argument("--id-col", default="id")
    est.add_argument("--period-col", default="period")
    est.add_argument("--y-col", default="y")
    est.add_argument("--x-cols", default="", help="comma-separated regressor columns")
    est.add_argument("--basis", choices=("full_x", "diff_x"), default="full_x",
                     help="projection basis for dqml_unrestricted")
    est.add_argument("--tol", type=float, default=None)
    est.add_argument("--max-iter", type=int, default=None)
    est.add_argument("--output", default="fit.json", help="fit document path")

    sim = sub.add_parser("simulate", help="run a bias/RMSE grid")
    sim.add_argument("--table", type=int, choices=(1, 2), required=True,
                     help="1: stationary burn-in grid; 2: short burn-in grid")
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--full", action="store_true", help="use the full 5000 replications")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--estimators", default=",".join(montecarlo.ESTIMATOR_ORDER))
    sim.add_argument("--out-dir", default=".")

    ver = sub.add_parser("verify", help="run the exact-identity self tests")
    ver.add_argument("check", nargs="?", choices=selfcheck.CHECK_NAMES, default=None)
    ver.add_argument("--dims", default="2..10", help="dimension range for the determinant check")
    ver.add_argument("--perturb", type=float, default=0.0,
                     help="test hook: inject this perturbation and expect failure")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_verify(args)
    except VALIDATION_ERRORS as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


def cmd_estimate(args) -> int:
    x_cols = tuple(c for c in args.x_cols.split(",") if c)
    schema = panel.CsvSchema(
        id_column=args.id_col,
        period_column=args.period_col,
        y_column=args.y_col,
        x_columns=x_cols,
    )
    ds = panel.load_csv(args.input, schema, args.lags)
    tol = args.tol if args.tol is not None else _env_float("DPQML_TOL", 1e-8)
    max_iter = args.max_iter if args.max_iter is not None else _env_int("DPQML_MAX_ITER", 5000)

    name = args.estimator
    if name == "lqml_ecme":
        fit = levels.fit_ecme(panel.build_augmented(ds), levels.FitConfig(tol=tol, max_iter=max_iter))
        names = _levels_coef_names(ds)
    elif name == "lqml_unrestricted":
        fit = levels.fit_iterated_fgls(
            panel.build_augmented(ds), levels.FitConfig(tol=tol, max_iter=max_iter)
        )
        names = _levels_coef_names(ds)
    elif name in ("dqml_x", "dqml_dx"):
        basis = "full_x" if name == "dqml_x" else "diff_x"
        sys_ = panel.build_differenced(ds, basis)
        fit = differenced.fit_diff_structured(
            sys_, differenced.DiffFitConfig(tol=tol, max_iter=max_iter)
        )
        names = _diff_coef_names(ds, sys_)
    elif name == "dqml_unrestricted":
        sys_ = panel.build_differenced(ds, args.basis)
        fit = differenced.fit_diff_unrestricted(
            sys_, differenced.DiffFitConfig(tol=tol, max_iter=max_iter)
        )
        names = _diff_coef_names(ds, sys_)
    else:
        spec = gmm.GmmSpec(variant="differenced" if name == "dgmm" else "system")
        fit = gmm.fit_gmm(ds, spec)
        names = list(gmm.build_instruments(ds, spec).coef_names)

    Path(args.output).write_text(json.dumps(fit_document(fit), indent=2) + "\n", encoding="utf-8")
    _print_coef_table(fit, names)
    if not fit.converged:
        print("warning: fit did not converge", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    reps = 5000 if args.full else args.reps
    if reps < 1:
        raise ValueError("--reps must be >= 1")
    if args.workers < 1:
        raise ValueError("--workers must be >= 1")
    estimators = tuple(e for e in args.estimators.split(",") if e)
    alias = {"lqml_ecme": "lqml"}
    estimators = tuple(alias.get(e, e) for e in estimators)
    grid = montecarlo.table_grid(args.table, reps=reps, seed=args.seed)
    report = montecarlo.run_grid(grid, estimators, workers=args.workers)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_text = montecarlo.report_csv(report)
    md_text = montecarlo.report_markdown(report)
    (out / f"table{args.table}_report.csv").write_text(csv_text, encoding="utf-8")
    (out / f"table{args.table}_report.md").write_text(md_text, encoding="utf-8")
    print(md_text, end="")
    return 0


def cmd_verify(args) -> int:
    dims = _parse_dims(args.dims)
    names = [args.check] if args.check else None
    results = selfcheck.run_checks(names, dims=dims, perturb=args.perturb)
    all_passed = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: max relative error {res.max_error:.3e} ({res.detail})")
        all_passed &= res.passed
    return 0 if all_passed else 1


def _parse_dims(text: str):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return range(int(lo), int(hi) + 1)
    return [int(v) for v in text.split(",") if v]


def _levels_coef_names(ds: panel.PanelDataset) -> list[str]:
    p, k, t = ds.lag_order, ds.n_regressors, ds.n_periods
    names = [f"delta_{j}" for j in range(1, p + 1)]
    names += [f"beta_{i}" for i in range(1, k + 1)]
    names.append("mu")
    names += [f"theta_x{t_}_{i}" for t_ in range(1, t + 1) for i in range(1, k + 1)]
    names += [f"theta_y0_{j}" for j in range(1, p + 1)]
    return names


def _diff_coef_names(ds: panel.PanelDataset, sys_) -> list[str]:
    p, k = ds.lag_order, ds.n_regressors
    names = [f"delta_{j}" for j in range(1, p + 1)]
    names += [f"beta_{i}" for i in range(1, k + 1)]
    for r in range(1, p + 1):
        names.append(f"mu_{r}")
        names += [f"theta_{r}_{i}" for i in range(1, sys_.basis_dim + 1)]
    return names


def _print_coef_table(fit, names) -> None:
    cov = fit.cov_sandwich
    print(f"estimator: {fit.estimator}")
    print(f"{'coefficient':<16}{'estimate':>12}{'std.err':>12}")
    for i, name in enumerate(names[: fit.coef.size]):
        if cov is not None and i < cov.shape[0] and cov[i, i] >= 0:
            se = f"{math.sqrt(cov[i, i]):>12.4f}"
        else:
            se = f"{'--':>12}"
        print(f"{name:<16}{fit.coef[i]:>12.4f}{se}")
    if isinstance(fit.omega, dict):
        fields = ", ".join(f"{k}={_fmt(v)}" for k, v in fit.omega.items())
        print(f"covariance: {fields}")
    print(f"loglik: {fit.loglik:.6f}  iterations: {fit.iterations}  converged: {fit.converged}")
    if fit.sigma_a_zeroed:
        print("note: effect variance pinned to zero by the correlation rule")


def _fmt(v) -> str:
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(f"{x:.4f}" for x in v) + "]"
    return f"{float(v):.4f}"


if __name__ == "__main__":
    sys.exit(main())
