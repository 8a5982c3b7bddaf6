"""Balanced panel dataset: validation, CSV ingestion, and design construction.

The dataset is the single source of truth for every design matrix the
estimators consume.  Each individual carries T + p observations of the
dependent variable (the first p are pre-sample values) and T rows of
regressors.  Time is indexed t = -p+1, ..., 0, 1, ..., T; array column m of
``y`` holds time t = m - p + 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import InsufficientPeriodsError, ParseError, UnbalancedPanelError

ProjectionBasis = Literal["full_x", "diff_x"]


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel with p pre-sample values of the dependent variable.

    Attributes
    ----------
    y : ndarray, shape (N, T + p)
        Dependent variable; column m holds time t = m - p + 1.
    x : ndarray, shape (N, T, K)
        Regressors for t = 1..T.
    lag_order : int
        Autoregressive order p.
    labels : tuple of str, optional
        Individual identifiers, one per row of ``y``.
    """

    y: np.ndarray
    x: np.ndarray
    lag_order: int
    labels: Optional[tuple[str, ...]] = None
    periods: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        p = self.lag_order
        if p < 1:
            raise ValueError(f"lag_order must be >= 1, got {p}")
        if y.ndim != 2 or x.ndim != 3:
            raise ValueError("y must be (N, T+p) and x must be (N, T, K)")
        n, t_plus_p = y.shape
        t = t_plus_p - p
        if n < 2 or t < 2:
            raise ValueError(f"need N >= 2 and T >= 2, got N={n}, T={t}")
        if x.shape[0] != n or x.shape[1] != t:
            raise ValueError(f"x shape {x.shape} inconsistent with y shape {y.shape}, p={p}")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise ValueError("non-finite values in panel data")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels length must equal the number of individuals")
        if self.periods is not None and len(self.periods) != t_plus_p:
            raise ValueError("periods length must equal T + p")

    @property
    def n_individuals(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1] - self.lag_order

    @property
    def n_regressors(self) -> int:
        return self.x.shape[2]

    def presample(self) -> np.ndarray:
        """(N, p) stack of (y_0, y_{-1}, ..., y_{-p+1}) per individual."""
        return self.y[:, self.lag_order - 1 :: -1].copy()

    def lag_matrix(self) -> np.ndarray:
        """(N, T, p) stack whose column j-1 is (y_{1-j}, ..., y_{T-j})."""
        p, t = self.lag_order, self.n_periods
        cols = [self.y[:, p - j : p - j + t] for j in range(1, p + 1)]
        return np.stack(cols, axis=2)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for long-format CSV ingestion."""

    id_column: str
    period_column: str
    y_column: str
    x_columns: tuple[str, ...] = ()


def load_csv(path, schema: CsvSchema, lag_order: int) -> PanelDataset:
    """Read a long-format CSV (one row per individual-period) into a panel.

    Every individual must cover the same contiguous period range; the first
    ``lag_order`` periods become pre-sample values of the dependent variable
    (their regressor values are discarded).

    Raises
    ------
    ParseError
        Missing or non-numeric cell, with the offending 1-based row number.
    UnbalancedPanelError
        Some individual does not cover the common period range.
    InsufficientPeriodsError
        Fewer than lag_order + 2 periods in the file.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ParseError(1, "empty file, header row required")
        needed = [schema.id_column, schema.period_column, schema.y_column, *schema.x_columns]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise ParseError(1, f"missing columns {missing}")

        rows: dict[str, dict[int, tuple[float, list[float]]]] = {}
        for rownum, record in enumerate(reader, start=2):
            try:
                period = int(record[schema.period_column])
            except (TypeError, ValueError):
                raise ParseError(rownum, f"bad period value {record.get(schema.period_column)!r}") from None
            ident = record[schema.id_column]
            if ident is None or ident == "":
                raise ParseError(rownum, "missing individual identifier")
            try:
                yval = float(record[schema.y_column])
                xvals = [float(record[c]) for c in schema.x_columns]
            except (TypeError, ValueError):
                raise ParseError(rownum, "missing or non-numeric cell") from None
            if not np.isfinite([yval, *xvals]).all():
                raise ParseError(rownum, "non-finite cell")
            per_id = rows.setdefault(ident, {})
            if period in per_id:
                raise ParseError(rownum, f"duplicate period {period} for individual {ident!r}")
            per_id[period] = (yval, xvals)

    if not rows:
        raise ParseError(2, "no data rows")

    all_periods = sorted({p for per_id in rows.values() for p in per_id})
    lo, hi = all_periods[0], all_periods[-1]
    full_range = list(range(lo, hi + 1))
    offenders = [ident for ident, per_id in rows.items() if sorted(per_id) != full_range]
    if offenders:
        raise UnbalancedPanelError(offenders)

    n_file_periods = len(full_range)
    if n_file_periods < lag_order + 2:
        raise InsufficientPeriodsError(
            f"{n_file_periods} periods cannot support lag order {lag_order} (need >= {lag_order + 2})"
        )

    idents = sorted(rows)
    y = np.array([[rows[i][p][0] for p in full_range] for i in idents])
    k = len(schema.x_columns)
    x = np.array([[rows[i][p][1] for p in full_range[lag_order:]] for i in idents])
    x = x.reshape(len(idents), n_file_periods - lag_order, k)
    return PanelDataset(
        y=y, x=x, lag_order=lag_order, labels=tuple(idents), periods=tuple(full_range)
    )


@dataclass(frozen=True)
class AugmentedDesign:
    """Per-individual stacks for the levels estimators.

    ``design`` columns are ordered (lag block | regressors | intercept |
    time-invariant controls), where the control block repeats, in every row,
    the vector of all regressor values followed by the pre-sample values.
    """

    response: np.ndarray  # (N, T)
    design: np.ndarray  # (N, T, p + K + 1 + z_dim)
    lag_order: int
    n_regressors: int
    z_dim: int

    @property
    def n_individuals(self) -> int:
        return self.response.shape[0]

    @property
    def n_periods(self) -> int:
        return self.response.shape[1]

    @property
    def n_coef(self) -> int:
        return self.design.shape[2]


def build_augmented(ds: PanelDataset) -> AugmentedDesign:
    """Assemble the control-function-augmented levels design."""
    n, t, k, p = ds.n_individuals, ds.n_periods, ds.n_regressors, ds.lag_order
    z = np.concatenate([ds.x.reshape(n, t * k), ds.presample()], axis=1)
    z_dim = t * k + p
    blocks = [
        ds.lag_matrix(),
        ds.x,
        np.ones((n, t, 1)),
        np.broadcast_to(z[:, None, :], (n, t, z_dim)),
    ]
    design = np.concatenate(blocks, axis=2)
    return AugmentedDesign(
        response=ds.y[:, p:].copy(),
        design=np.ascontiguousarray(design),
        lag_order=p,
        n_regressors=k,
        z_dim=z_dim,
    )


@dataclass(frozen=True)
class DifferencedSystem:
    """Per-individual stacks for the differenced estimators.

    The response stacks the p initial differences above the T - 1 differenced
    observations.  The design's top-right block is I_p kron (1, basis'); its
    bottom-left blocks hold differenced lags and regressors; all other blocks
    are zero.
    """

    response: np.ndarray  # (N, T + p - 1)
    design: np.ndarray  # (N, T + p - 1, q)
    lag_order: int
    n_regressors: int
    basis: ProjectionBasis
    basis_dim: int

    @property
    def n_individuals(self) -> int:
        return self.response.shape[0]

    @property
    def n_equations(self) -> int:
        return self.response.shape[1]

    @property
    def n_coef(self) -> int:
        return self.design.shape[2]

    @property
    def n_projections(self) -> int:
        return self.lag_order


def build_differenced(ds: PanelDataset, basis: ProjectionBasis = "full_x") -> DifferencedSystem:
    """Assemble the differenced system with initial-difference projections.

    ``basis`` selects the projection regressors for the initial differences:
    ``"full_x"`` uses all regressor values, ``"diff_x"`` their first
    differences.
    """
    if basis not in ("full_x", "diff_x"):
        raise ValueError(f"unknown projection basis {basis!r}")
    n, t, k, p = ds.n_individuals, ds.n_periods, ds.n_regressors, ds.lag_order
    dy = np.diff(ds.y, axis=1)  # column m is the difference at time m - p + 2
    dx = np.diff(ds.x, axis=1)  # (N, T-1, K), times 2..T

    if basis == "full_x":
        basis_vec = ds.x.reshape(n, t * k)
    else:
        basis_vec = dx.reshape(n, (t - 1) * k)
    m = basis_vec.shape[1]

    n_eq = t + p - 1
    q = p + k + p * (1 + m)
    design = np.zeros((n, n_eq, q))

    # projection rows: I_p kron (1, basis')
    for r in range(p):
        design[:, r, p + k + r * (1 + m)] = 1.0
        design[:, r, p + k + r * (1 + m) + 1 : p + k + (r + 1) * (1 + m)] = basis_vec

    # differenced-equation rows: lagged differences then differenced regressors
    for j in range(1, p + 1):
        design[:, p:, j - 1] = dy[:, p - j : p - j + t - 1]
    design[:, p:, p : p + k] = dx

    return DifferencedSystem(
        response=dy.copy(),
        design=design,
        lag_order=p,
        n_regressors=k,
        basis=basis,
        basis_dim=m,
    )
