"""Fit result container and its JSON document form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


@dataclass
class QmlFit:
    """Outcome of one estimator run.

    ``coef`` holds the regression-side coefficient vector; ``omega`` the
    fitted error covariance in whichever form the estimator uses (full matrix,
    or a dict of structured fields).  ``extra`` carries estimator-specific
    fields that go into the JSON document verbatim (e.g. instrument_count).
    """

    estimator: str
    coef: np.ndarray
    omega: Any
    loglik: float
    loglik_trace: np.ndarray
    cov_sandwich: Optional[np.ndarray]
    iterations: int
    converged: bool
    sigma_a_zeroed: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def delta(self) -> np.ndarray:
        """Lag coefficients (the leading block of ``coef``)."""
        p = self.extra.get("lag_order", 1)
        return self.coef[:p]


def fit_document(fit: QmlFit) -> dict:
    """JSON-serializable fit document with fixed field names."""
    if isinstance(fit.omega, dict):
        omega = {k: _plain(v) for k, v in fit.omega.items()}
    else:
        omega = _plain(fit.omega)
    doc = {
        "estimator": fit.estimator,
        "gamma": _plain(fit.coef),
        "omega": omega,
        "loglik": _plain(fit.loglik),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "sigma_a_zeroed": fit.sigma_a_zeroed,
        "cov_sandwich": _plain(fit.cov_sandwich) if fit.cov_sandwich is not None else None,
    }
    for key, val in fit.extra.items():
        if key != "lag_order":
            doc[key] = _plain(val)
    return doc


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value
