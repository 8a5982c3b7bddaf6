"""Monte Carlo harness: data-generating processes and bias/RMSE grids.

Each replication draws from its own counter-based Philox substream keyed by
(seed, cell index, replication index), so results are bitwise identical no
matter how replications are scheduled across workers.  Normal variates come
from inverting uniforms (no rejection), keeping the draw count per
replication fixed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import ndtri

from . import differenced, gmm, levels, panel
from .errors import DpqmlError

logger = logging.getLogger(__name__)

DELTA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9)
SIGMA_ZETA_GRID = (1.0, 4.0)
ESTIMATOR_ORDER = ("dgmm", "sgmm", "lqml", "dqml_x", "dqml_dx")
ESTIMATOR_LABELS = {
    "dgmm": "DGMM",
    "sgmm": "SGMM",
    "lqml": "LQML",
    "dqml_x": "DQML_x",
    "dqml_dx": "DQML_dx",
}


@dataclass(frozen=True)
class DgpConfig:
    """One design cell of the simulation grid."""

    delta0: float
    beta0: float = 0.5
    sigma_zeta: float = 1.0
    t0: int = 50
    n_periods: int = 10
    n_individuals: int = 200
    reps: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.t0 < 1:
            raise ValueError("t0 must be >= 1")


def substream(seed: int, cell_index: int, rep_index: int) -> np.random.Generator:
    """Philox generator for one replication of one grid cell."""
    key = ((seed & 0xFFFFFFFFFFFFFFFF), ((cell_index << 32) | rep_index) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def _chi2_5(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Chi-square with five degrees of freedom as a sum of squared inverted normals."""
    normals = ndtri(rng.random(shape + (5,)))
    return np.sum(normals**2, axis=-1)


def generate_sample(cfg: DgpConfig, rng: np.random.Generator) -> panel.PanelDataset:
    """Draw one panel: AR(1) regressor, skewed multiplicative noise, skewed effect.

    The regressor starts at 5 + 10 * xi with uniform unit-variance shocks; the
    idiosyncratic error is the regressor times a standardized chi-square, so
    errors are conditionally heteroskedastic; the individual effect mixes the
    log regressor path with standardized chi-square noise scaled by
    sigma_zeta.  Burn-in periods are discarded so the returned panel holds one
    pre-sample value and T estimation periods.
    """
    n, t_len, t0 = cfg.n_individuals, cfg.n_periods, cfg.t0
    horizon = t0 + t_len  # times -t0+1 .. T relative to index 1 .. horizon

    root3 = math.sqrt(3.0)
    xi = root3 * (2.0 * rng.random((n, horizon + 1)) - 1.0)
    eps = _chi2_5(rng, (n, horizon))
    zeta = _chi2_5(rng, (n,))

    x = np.empty((n, horizon + 1))
    x[:, 0] = 5.0 + 10.0 * xi[:, 0]
    for m in range(1, horizon + 1):
        x[:, m] = 0.5 + 0.5 * x[:, m - 1] + xi[:, m]

    v = x[:, 1:] * (eps - 5.0) / math.sqrt(10.0)
    c = np.mean(np.log(np.abs(x[:, t0:])), axis=1) + cfg.sigma_zeta * (zeta - 5.0) / math.sqrt(10.0)

    y = np.zeros((n, horizon + 1))
    for m in range(1, horizon + 1):
        y[:, m] = cfg.delta0 * y[:, m - 1] + cfg.beta0 * x[:, m] + c + v[:, m - 1]

    return panel.PanelDataset(
        y=y[:, t0:].copy(), x=x[:, t0 + 1 :, None].copy(), lag_order=1
    )


def _delta_lqml(ds: panel.PanelDataset) -> float:
    fit = levels.fit_ecme(panel.build_augmented(ds), levels.FitConfig(with_sandwich=False))
    if not fit.converged:
        logger.warning("lqml fit did not converge (using final iterate)")
    return float(fit.coef[0])


def _delta_dqml(ds: panel.PanelDataset, basis: panel.ProjectionBasis) -> float:
    sys = panel.build_differenced(ds, basis)
    fit = differenced.fit_diff_structured(sys, differenced.DiffFitConfig(with_sandwich=False))
    if not fit.converged:
        logger.warning("dqml(%s) fit did not converge (using final iterate)", basis)
    return float(fit.coef[0])


def _delta_gmm(ds: panel.PanelDataset, variant: str) -> float:
    fit = gmm.fit_gmm(ds, gmm.GmmSpec(variant=variant, steps="one_step"))
    return float(fit.coef[0])


ESTIMATORS: dict[str, Callable[[panel.PanelDataset], float]] = {
    "dgmm": lambda ds: _delta_gmm(ds, "differenced"),
    "sgmm": lambda ds: _delta_gmm(ds, "system"),
    "lqml": _delta_lqml,
    "dqml_x": lambda ds: _delta_dqml(ds, "full_x"),
    "dqml_dx": lambda ds: _delta_dqml(ds, "diff_x"),
}


@dataclass(frozen=True)
class McCellResult:
    """Bias and RMSE of one estimator on one design cell."""

    estimator: str
    delta0: float
    sigma_zeta: float
    t0: int
    reps_used: int
    failures: int
    bias: float
    rmse: float


@dataclass(frozen=True)
class McReport:
    """Full grid outcome plus optional per-replication estimates."""

    results: tuple[McCellResult, ...]
    seed: int
    estimates: Optional[dict] = field(default=None, compare=False)


def _run_chunk(args) -> tuple[int, int, dict[str, list[float]]]:
    cell_index, cfg, rep_lo, rep_hi, names = args
    values: dict[str, list[float]] = {name: [] for name in names}
    for rep in range(rep_lo, rep_hi):
        ds = generate_sample(cfg, substream(cfg.seed, cell_index, rep))
        for name in names:
            try:
                values[name].append(ESTIMATORS[name](ds))
            except (DpqmlError, np.linalg.LinAlgError) as exc:
                logger.warning(
                    "estimator %s failed on cell %d rep %d: %s", name, cell_index, rep, exc
                )
                values[name].append(float("nan"))
    return cell_index, rep_lo, values


def run_grid(
    grid: Iterable[DgpConfig],
    estimators: Iterable[str] = ESTIMATOR_ORDER,
    workers: int = 1,
    keep_estimates: bool = False,
) -> McReport:
    """Run every (cell, replication, estimator) combination and reduce to bias/RMSE.

    Replications are independent tasks; the reduction iterates cells and
    replication indices in a fixed order, so the report does not depend on
    ``workers``.
    """
    grid = list(grid)
    names = list(estimators)
    unknown = [n for n in names if n not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators: {unknown}")
    if not grid:
        raise ValueError("empty grid")
    seed = grid[0].seed

    store = {
        (ci, name): np.full(cfg.reps, np.nan)
        for ci, cfg in enumerate(grid)
        for name in names
    }
    tasks = []
    for ci, cfg in enumerate(grid):
        chunk = max(1, math.ceil(cfg.reps / (max(1, workers) * 4)))
        for lo in range(0, cfg.reps, chunk):
            tasks.append((ci, cfg, lo, min(lo + chunk, cfg.reps), names))

    if workers <= 1:
        outputs = map(_run_chunk, tasks)
        for ci, lo, values in outputs:
            for name, vals in values.items():
                store[(ci, name)][lo : lo + len(vals)] = vals
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ci, lo, values in pool.map(_run_chunk, tasks):
                for name, vals in values.items():
                    store[(ci, name)][lo : lo + len(vals)] = vals

    results = []
    for ci, cfg in enumerate(grid):
        for name in names:
            vals = store[(ci, name)]
            ok = np.isfinite(vals)
            errors = vals[ok] - cfg.delta0
            bias = float(np.mean(errors)) if ok.any() else float("nan")
            rmse = float(np.sqrt(np.mean(errors**2))) if ok.any() else float("nan")
            results.append(
                McCellResult(
                    estimator=name,
                    delta0=cfg.delta0,
                    sigma_zeta=cfg.sigma_zeta,
                    t0=cfg.t0,
                    reps_used=int(ok.sum()),
                    failures=int(cfg.reps - ok.sum()),
                    bias=bias,
                    rmse=rmse,
                )
            )
    estimates = {f"{name}/cell{ci}": store[(ci, name)] for ci, name in store} if keep_estimates else None
    return McReport(results=tuple(results), seed=seed, estimates=estimates)


def table_grid(
    table: int,
    reps: int = 500,
    seed: int = 0,
    n_individuals: int = 200,
    n_periods: int = 10,
) -> list[DgpConfig]:
    """The 12-cell grid behind the stationary (table 1) or nonstationary (table 2) study."""
    if table not in (1, 2):
        raise ValueError("table must be 1 or 2")
    t0 = 50 if table == 1 else 1
    return [
        DgpConfig(
            delta0=d,
            sigma_zeta=s,
            t0=t0,
            reps=reps,
            seed=seed,
            n_individuals=n_individuals,
            n_periods=n_periods,
        )
        for s in SIGMA_ZETA_GRID
        for d in DELTA_GRID
    ]


def report_csv(report: McReport) -> str:
    """Fixed-order, fixed-format CSV; byte-identical for identical inputs."""
    lines = ["estimator,delta0,sigma_zeta,t0,reps,failures,bias,rmse"]
    for r in report.results:
        lines.append(
            f"{r.estimator},{r.delta0:.4g},{r.sigma_zeta:.4g},{r.t0},"
            f"{r.reps_used},{r.failures},{r.bias:.10g},{r.rmse:.10g}"
        )
    return "\n".join(lines) + "\n"


def report_markdown(report: McReport) -> str:
    """Markdown table mirroring the two-panel bias/RMSE layout."""
    by_key = {(r.estimator, r.sigma_zeta, r.delta0): r for r in report.results}
    sigmas = sorted({r.sigma_zeta for r in report.results})
    deltas = sorted({r.delta0 for r in report.results})
    names = [n for n in ESTIMATOR_ORDER if any(r.estimator == n for r in report.results)]
    extra = [n for n in {r.estimator for r in report.results} if n not in names]
    names += sorted(extra)

    lines = []
    for sigma in sigmas:
        lines.append(f"### sigma_zeta = {sigma:g}")
        lines.append("")
        header = "| estimator | stat | " + " | ".join(f"{d:g}" for d in deltas) + " |"
        rule = "|---|---|" + "---|" * len(deltas)
        lines.append(header)
        lines.append(rule)
        for name in names:
            label = ESTIMATOR_LABELS.get(name, name)
            for stat in ("bias", "rmse"):
                cells = []
                for d in deltas:
                    r = by_key.get((name, sigma, d))
                    cells.append("" if r is None else f"{getattr(r, stat):.4f}")
                lines.append(f"| {label} | {stat} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)
