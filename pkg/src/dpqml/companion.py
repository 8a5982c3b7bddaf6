"""Companion-form matrices for p-th-order lag recursions.

The autoregression y_t = delta_1 y_{t-1} + ... + delta_p y_{t-p} + w_t can be
written as a first-order recursion in the stacked state (y_t, ..., y_{t-p+1})
with transition matrix ``companion(delta)``.  Unrolling that recursion yields,
for each lag j, a pair of loading matrices: one applied to the p pre-sample
values and one applied to the shock path.  These loadings are exact algebraic
objects, used here both as Monte Carlo ground truth and as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def companion(delta: np.ndarray) -> np.ndarray:
    """p x p companion matrix: first row delta, ones on the subdiagonal."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    p = delta.shape[0]
    f = np.zeros((p, p))
    f[0, :] = delta
    if p > 1:
        f[np.arange(1, p), np.arange(p - 1)] = 1.0
    return f


def companion_powers(delta: np.ndarray, t_max: int) -> np.ndarray:
    """Stack of powers F^0 ... F^t_max, shape (t_max + 1, p, p)."""
    f = companion(delta)
    p = f.shape[0]
    powers = np.empty((t_max + 1, p, p))
    powers[0] = np.eye(p)
    for t in range(1, t_max + 1):
        powers[t] = f @ powers[t - 1]
    return powers


def antidiagonal(p: int) -> np.ndarray:
    """p x p anti-diagonal permutation (reverses coordinate order)."""
    return np.eye(p)[::-1].copy()


def build_aj_bj(delta: np.ndarray, n_periods: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Loading matrices of the lag-j vector on pre-sample values and shocks.

    Row t of the first matrix maps the pre-sample stack (y_0, ..., y_{-p+1})
    to y_{t-j}; row t of the second maps the shock path (w_1, ..., w_T).  For
    t <= j the lag lands in the pre-sample block, giving a reversed-identity
    row; beyond that the rows carry first-row entries of powers of the
    companion matrix.  The second matrix has zeros down its main diagonal.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    p = delta.shape[0]
    if not 1 <= j <= p:
        raise ValueError(f"lag index j={j} outside 1..{p}")
    if n_periods <= j:
        raise ValueError(f"need n_periods > j, got {n_periods} <= {j}")
    powers = companion_powers(delta, n_periods)

    a = np.zeros((n_periods, p))
    for t in range(1, j + 1):
        a[t - 1, j - t] = 1.0
    for t in range(j + 1, n_periods + 1):
        a[t - 1, :] = powers[t - j][0, :]

    b = np.zeros((n_periods, n_periods))
    f11 = powers[:, 0, 0]  # f11[0] = 1
    for t in range(j + 1, n_periods + 1):
        s = t - j
        b[t - 1, :s] = f11[s - 1 :: -1][:s]
    return a, b


def build_dj(delta: np.ndarray, n_periods: int, j: int) -> np.ndarray:
    """Differenced-system analogue of the lag-j loadings.

    Block matrix [[0, 0], [A~_j I*, B~_j]] of size (T + p - 1) where A~_j is
    the first T - 1 rows of the pre-sample loading, B~_j the leading
    (T - 1) x (T - 1) block of the shock loading, and I* the anti-diagonal
    permutation.  Its trace is zero by construction.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    p = delta.shape[0]
    a, b = build_aj_bj(delta, n_periods, j)
    dim = n_periods + p - 1
    d = np.zeros((dim, dim))
    d[p:, :p] = a[: n_periods - 1, :] @ antidiagonal(p)
    d[p:, p:] = b[: n_periods - 1, : n_periods - 1]
    return d


@dataclass(frozen=True)
class CompanionMatrices:
    """All lag loadings for one (delta, T) pair, with cached companion powers."""

    f: np.ndarray
    f_powers: np.ndarray
    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    d: tuple[np.ndarray, ...]
    i_star: np.ndarray

    @property
    def lag_order(self) -> int:
        return self.f.shape[0]


def companion_matrices(delta: np.ndarray, n_periods: int) -> CompanionMatrices:
    """Build every lag loading j = 1..p for the given coefficient vector."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    p = delta.shape[0]
    pairs = [build_aj_bj(delta, n_periods, j) for j in range(1, p + 1)]
    return CompanionMatrices(
        f=companion(delta),
        f_powers=companion_powers(delta, n_periods),
        a=tuple(a for a, _ in pairs),
        b=tuple(b for _, b in pairs),
        d=tuple(build_dj(delta, n_periods, j) for j in range(1, p + 1)),
        i_star=antidiagonal(p),
    )
