"""Differenced and system GMM baselines for first-order dynamic panels.

Fixed textbook constructions: differenced equations t = 2..T instrumented by
lagged levels of the dependent variable plus, per equation, the full vector
of regressor levels (the strictly-exogenous treatment); the system variant
adds the level equations instrumented by the lagged difference, the
regressors in levels, and an intercept.  One-step weighting uses the
differencing-induced tridiagonal block and an identity block for level
equations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import InsufficientMomentsError, UnsupportedLagOrderError
from .panel import PanelDataset
from .results import QmlFit


@dataclass(frozen=True)
class GmmSpec:
    variant: Literal["differenced", "system"] = "differenced"
    steps: Literal["one_step", "two_step"] = "one_step"
    instrument_cap: Optional[int] = None
    x_treatment: Literal["strictly_exogenous_iv"] = "strictly_exogenous_iv"


@dataclass(frozen=True)
class GmmArrays:
    """Per-individual stacked equations, regressors, instruments, and one-step weight."""

    response: np.ndarray  # (N, R)
    regressors: np.ndarray  # (N, R, k)
    instruments: np.ndarray  # (N, R, m)
    weight_kernel: np.ndarray  # (R, R) one-step H block
    coef_names: tuple[str, ...]


def differenced_y_instrument_count(n_periods: int, cap: Optional[int] = None) -> int:
    """Number of lagged-level instrument columns across equations t = 2..T."""
    total = 0
    for t in range(2, n_periods + 1):
        avail = t - 1
        total += min(avail, cap) if cap is not None else avail
    return total


def differenced_x_instrument_count(n_periods: int, n_regressors: int) -> int:
    """Per-equation full regressor-level blocks across equations t = 2..T."""
    return (n_periods - 1) * n_periods * n_regressors


def level_y_instrument_count(n_periods: int) -> int:
    """One lagged-difference instrument per level equation t = 2..T."""
    return n_periods - 1


def build_instruments(ds: PanelDataset, spec: GmmSpec) -> GmmArrays:
    """Assemble the per-individual instrument and regressor stacks."""
    if ds.lag_order != 1:
        raise UnsupportedLagOrderError("GMM baselines are defined for lag order 1")
    t_len = ds.n_periods
    if t_len < 3:
        raise InsufficientMomentsError(f"need T >= 3, got T = {t_len}")
    n, k = ds.n_individuals, ds.n_regressors

    y = ds.y  # column m holds time t = m (p = 1)
    dy = np.diff(y, axis=1)  # column m holds the difference at time m + 1
    dx = np.diff(ds.x, axis=1)  # (N, T-1, K), times 2..T
    n_eq = t_len - 1  # equations t = 2..T

    resp_diff = dy[:, 1:]
    reg_diff = np.concatenate([dy[:, :-1][:, :, None], dx], axis=2)

    cap = spec.instrument_cap
    m_y = differenced_y_instrument_count(t_len, cap)
    m_x = n_eq * t_len * k
    z_diff = np.zeros((n, n_eq, m_y + m_x))
    col = 0
    for e in range(n_eq):
        t = e + 2
        start = 0 if cap is None else max(0, (t - 1) - cap)
        width = (t - 1) - start
        z_diff[:, e, col : col + width] = y[:, start : t - 1]
        col += width
    x_flat = ds.x.reshape(n, t_len * k)
    for e in range(n_eq):
        z_diff[:, e, m_y + e * t_len * k : m_y + (e + 1) * t_len * k] = x_flat

    h_diff = 2.0 * np.eye(n_eq)
    off = np.arange(n_eq - 1)
    h_diff[off, off + 1] = -1.0
    h_diff[off + 1, off] = -1.0

    if spec.variant == "differenced":
        names = ("delta",) + tuple(f"beta_{i + 1}" for i in range(k))
        return GmmArrays(resp_diff, reg_diff, z_diff, h_diff, names)

    # system variant: append level equations t = 2..T
    resp_lev = y[:, 2:]
    reg_lev = np.concatenate(
        [y[:, 1:-1][:, :, None], ds.x[:, 1:], np.ones((n, n_eq, 1))], axis=2
    )
    reg_diff_padded = np.concatenate([reg_diff, np.zeros((n, n_eq, 1))], axis=2)

    m_lev = level_y_instrument_count(t_len) + k + 1
    z_lev = np.zeros((n, n_eq, m_lev))
    for e in range(n_eq):
        z_lev[:, e, e] = dy[:, e]  # lagged difference at time t - 1
    z_lev[:, :, n_eq : n_eq + k] = ds.x[:, 1:]
    z_lev[:, :, n_eq + k] = 1.0

    response = np.concatenate([resp_diff, resp_lev], axis=1)
    regressors = np.concatenate([reg_diff_padded, reg_lev], axis=1)
    m_total = z_diff.shape[2] + m_lev
    instruments = np.zeros((n, 2 * n_eq, m_total))
    instruments[:, :n_eq, : z_diff.shape[2]] = z_diff
    instruments[:, n_eq:, z_diff.shape[2] :] = z_lev

    kernel = np.zeros((2 * n_eq, 2 * n_eq))
    kernel[:n_eq, :n_eq] = h_diff
    kernel[n_eq:, n_eq:] = np.eye(n_eq)
    names = ("delta",) + tuple(f"beta_{i + 1}" for i in range(k)) + ("const",)
    return GmmArrays(response, regressors, instruments, kernel, names)


def solve_gmm_arrays(arrays: GmmArrays, steps: str = "one_step") -> tuple[np.ndarray, np.ndarray, bool]:
    """Linear GMM on prebuilt stacks; returns (coefficients, covariance, truncated flag)."""
    z, x, resp = arrays.instruments, arrays.regressors, arrays.response

    a = np.einsum("nrm,nrk->mk", z, x)
    c = np.einsum("nrm,nr->m", z, resp)
    zh = np.einsum("rs,nsm->nrm", arrays.weight_kernel, z)
    zhz = np.einsum("nrm,nrl->ml", z, zh)

    weight, truncated = _invert_weight(zhz)
    coef = _gmm_solve(a, weight, c)

    if steps == "two_step":
        u = resp - np.einsum("nrk,k->nr", x, coef)
        zu = np.einsum("nrm,nr->nm", z, u)
        weight, trunc2 = _invert_weight(zu.T @ zu)
        truncated |= trunc2
        coef = _gmm_solve(a, weight, c)

    u = resp - np.einsum("nrk,k->nr", x, coef)
    zu = np.einsum("nrm,nr->nm", z, u)
    s = zu.T @ zu
    bread = np.linalg.pinv(a.T @ weight @ a)
    mid = a.T @ weight @ s @ weight @ a
    cov = bread @ mid @ bread
    return coef, 0.5 * (cov + cov.T), truncated


def fit_gmm(ds: PanelDataset, spec: GmmSpec) -> QmlFit:
    """Linear GMM fit; one-step by default, optional clustered two-step reweighting."""
    arrays = build_instruments(ds, spec)
    coef, cov, truncated = solve_gmm_arrays(arrays, spec.steps)
    estimator = "dgmm" if spec.variant == "differenced" else "sgmm"
    return QmlFit(
        estimator=estimator,
        coef=coef,
        omega=None,
        loglik=float("nan"),
        loglik_trace=np.array([]),
        cov_sandwich=cov,
        iterations=1 if spec.steps == "one_step" else 2,
        converged=True,
        extra={
            "lag_order": 1,
            "instrument_count": arrays.instruments.shape[2],
            "weight_truncated": truncated,
        },
    )


def _invert_weight(mat: np.ndarray) -> tuple[np.ndarray, bool]:
    """Invert a moment weight matrix, falling back to a flagged pseudo-inverse."""
    try:
        chol = np.linalg.cholesky(mat)
        inv = np.linalg.inv(chol)
        return inv.T @ inv, False
    except np.linalg.LinAlgError:
        warnings.warn("singular GMM weight matrix, using rank-truncated pseudo-inverse")
        return np.linalg.pinv(mat, rcond=1e-12, hermitian=True), True


def _gmm_solve(a: np.ndarray, weight: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = a.T @ weight @ a
    rhs = a.T @ weight @ c
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("singular GMM normal equations, using pseudo-inverse solution")
        return np.linalg.pinv(m) @ rhs
