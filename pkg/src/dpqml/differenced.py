"""Differenced quasi maximum likelihood for the initial-difference system.

Two variants: iterated FGLS with an unrestricted system covariance, and (for
first-order dynamics only) a structured covariance sigma^2 * Phi whose Phi is
the differencing-induced tridiagonal pattern with a free head entry.  The head
entry is driven through phi = exp(w) + 1 - 1/dim, which keeps the covariance
positive definite for every real w; its determinant then collapses to
dim * exp(w), so the log-determinant term in the likelihood is just w plus a
constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from . import _mlcore
from .errors import NotPositiveDefiniteError, UnsupportedLagOrderError
from .panel import DifferencedSystem
from .results import QmlFit


@dataclass(frozen=True)
class PhiScaleCovariance:
    """System covariance sigma2 * Phi(varpi) of a given dimension."""

    sigma2: float
    varpi: float
    dim: int

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise NotPositiveDefiniteError("sigma2 must be positive")

    @property
    def phi_head(self) -> float:
        return float(np.exp(self.varpi) + 1.0 - 1.0 / self.dim)

    def phi(self) -> np.ndarray:
        return phi_matrix(self.varpi, self.dim)

    def matrix(self) -> np.ndarray:
        return self.sigma2 * self.phi()

    def logdet(self) -> float:
        return self.dim * float(np.log(self.sigma2)) + float(np.log(self.dim)) + self.varpi


UpsilonLike = Union[np.ndarray, PhiScaleCovariance]


@dataclass(frozen=True)
class DiffParams:
    """Coefficients plus system covariance for the differenced likelihood."""

    eta: np.ndarray
    upsilon: UpsilonLike

    def upsilon_matrix(self) -> np.ndarray:
        if isinstance(self.upsilon, PhiScaleCovariance):
            return self.upsilon.matrix()
        return np.asarray(self.upsilon, dtype=float)


@dataclass(frozen=True)
class DiffFitConfig:
    tol: float = 1e-8
    max_iter: int = 1000
    init: str = "ols"
    with_sandwich: bool = True


def phi_matrix(varpi: float, dim: int) -> np.ndarray:
    """Tridiagonal (2, -1) pattern with head entry exp(varpi) + 1 - 1/dim."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    phi = 2.0 * np.eye(dim)
    off = np.arange(dim - 1)
    phi[off, off + 1] = -1.0
    phi[off + 1, off] = -1.0
    phi[0, 0] = np.exp(varpi) + 1.0 - 1.0 / dim
    return phi


def _phi_banded(varpi: float, dim: int) -> np.ndarray:
    """Lower banded storage of Phi for scipy.linalg.solveh_banded."""
    ab = np.zeros((2, dim))
    ab[0, :] = 2.0
    ab[0, 0] = np.exp(varpi) + 1.0 - 1.0 / dim
    ab[1, :-1] = -1.0
    return ab


def phi_solve(varpi: float, rhs: np.ndarray) -> np.ndarray:
    """Solve Phi(varpi) x = rhs via the banded factorization, O(dim) per column."""
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    cols = rhs[:, None] if vec else rhs
    out = scipy.linalg.solveh_banded(_phi_banded(varpi, cols.shape[0]), cols, lower=True)
    return out[:, 0] if vec else out


def diff_quasi_loglik(sys: DifferencedSystem, params: DiffParams) -> float:
    """Gaussian quasi log-likelihood of the stacked system.

    For the structured covariance the log-determinant reduces to
    dim * log sigma2 + log dim + varpi, and the quadratic form is evaluated
    with banded solves; the value equals the unrestricted formula at
    sigma2 * Phi(varpi) exactly.
    """
    if isinstance(params.upsilon, PhiScaleCovariance):
        ups = params.upsilon
        n, dim = sys.response.shape
        u = _mlcore.residual_stack(sys.response, sys.design, params.eta)
        quad = float(np.sum(u * phi_solve(ups.varpi, u.T).T)) / ups.sigma2
        return -0.5 * n * dim * _mlcore.LOG_2PI - 0.5 * n * ups.logdet() - 0.5 * quad
    return _mlcore.gaussian_loglik(
        sys.response, sys.design, params.eta, params.upsilon_matrix()
    )


def diff_score(sys: DifferencedSystem, params: DiffParams) -> np.ndarray:
    """Total score: coefficients first, then covariance coordinates.

    Structured coordinates are (sigma2, varpi); unrestricted ones are the
    vech entries of the system covariance.
    """
    cov = params.upsilon_matrix()
    cov_inv, _ = _mlcore.chol_inverse(cov)
    basis = _structured_basis(params.upsilon) if isinstance(
        params.upsilon, PhiScaleCovariance
    ) else _mlcore.unrestricted_basis(cov.shape[0])
    parts = _mlcore.score_parts(sys.response, sys.design, params.eta, cov_inv, basis)
    return parts.sum(axis=0)


def fit_diff_unrestricted(sys: DifferencedSystem, cfg: DiffFitConfig = DiffFitConfig()) -> QmlFit:
    """Iterated FGLS on the stacked system with an unrestricted covariance."""
    y, w = sys.response, sys.design
    coef, cov, trace, iters, converged = _mlcore.iterated_fgls_path(
        y, w, cfg.tol, cfg.max_iter, settled=lambda c, v: _diff_score_settled(sys, c, v, cfg)
    )
    cov_sandwich = None
    if cfg.with_sandwich and converged:
        cov_sandwich = _mlcore.sandwich(y, w, coef, cov, _mlcore.unrestricted_basis(cov.shape[0]))
    return QmlFit(
        estimator="dqml_unrestricted",
        coef=coef,
        omega=cov,
        loglik=trace[-1],
        loglik_trace=np.array(trace),
        cov_sandwich=cov_sandwich,
        iterations=iters,
        converged=converged,
        extra={"lag_order": sys.lag_order, "basis": sys.basis},
    )


def fit_diff_structured(sys: DifferencedSystem, cfg: DiffFitConfig = DiffFitConfig()) -> QmlFit:
    """Structured-covariance fit by coordinate maximization.

    Alternates (a) GLS for the coefficients at Phi(varpi) — the scale cancels
    from the weighting; (b) the closed-form scale given the residuals; and
    (c) a safeguarded-Newton line search over varpi with the scale
    concentrated out.  Only first-order dynamics admit this covariance.
    """
    if sys.lag_order != 1:
        raise UnsupportedLagOrderError(
            f"structured differenced covariance requires lag order 1, got {sys.lag_order}"
        )
    y, w = sys.response, sys.design
    n, dim = y.shape
    d = w.shape[2]
    w2 = w.reshape(n * dim, d)

    p_flat = (
        np.tensordot(w, w, axes=([0], [0])).transpose(0, 2, 1, 3).reshape(dim * dim, d * d)
    )
    q_flat = np.tensordot(w, y, axes=([0], [0])).transpose(0, 2, 1).reshape(dim * dim, d)

    # Phi(varpi) is the fixed head-2 tridiagonal plus a rank-one corner bump of
    # size tau = exp(varpi) - 1 - 1/dim, so one base inverse serves every varpi.
    base_ab = np.zeros((2, dim))
    base_ab[0, :] = 2.0
    base_ab[1, :-1] = -1.0
    base_inv = scipy.linalg.solveh_banded(base_ab, np.eye(dim), lower=True)
    corner = base_inv[:, 0].copy()
    corner_head = float(corner[0])

    def phi_inv_at(varpi: float) -> np.ndarray:
        tau = math.exp(varpi) - 1.0 - 1.0 / dim
        scale = tau / (1.0 + tau * corner_head)
        return base_inv - scale * np.outer(corner, corner)

    def gls_at(varpi: float) -> np.ndarray:
        flat = phi_inv_at(varpi).ravel()
        gram = (flat @ p_flat).reshape(d, d)
        rhs = flat @ q_flat
        return _mlcore.solve_gram(gram, rhs)

    def weighted_rss(varpi: float, q_base: float, h_base: float) -> float:
        tau = math.exp(varpi) - 1.0 - 1.0 / dim
        return q_base - (tau / (1.0 + tau * corner_head)) * h_base

    varpi = 0.0
    eta = gls_at(varpi)
    u = y - (w2 @ eta).reshape(n, dim)
    q_base = float(np.einsum("ns,st,nt->", u, base_inv, u))
    h_base = float(np.sum((u @ corner) ** 2))
    sigma2 = weighted_rss(varpi, q_base, h_base) / (n * dim)

    trace: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iter + 1):
        eta_new = gls_at(varpi)
        u = y - (w2 @ eta_new).reshape(n, dim)
        q_base = float(np.einsum("ns,st,nt->", u, base_inv, u))
        h_base = float(np.sum((u @ corner) ** 2))
        varpi_new = _maximize_varpi(q_base, h_base, corner_head, dim, varpi)
        sigma2_new = weighted_rss(varpi_new, q_base, h_base) / (n * dim)

        trace.append(
            -0.5 * n * dim * (_mlcore.LOG_2PI + 1.0 + math.log(sigma2_new))
            - 0.5 * n * (math.log(dim) + varpi_new)
        )

        change = _mlcore._rel_change(
            np.concatenate([eta_new, [sigma2_new, varpi_new]]),
            np.concatenate([eta, [sigma2, varpi]]),
        )
        eta, sigma2, varpi = eta_new, sigma2_new, varpi_new
        if change < cfg.tol and _diff_score_settled(
            sys, eta, PhiScaleCovariance(sigma2, varpi, dim), cfg
        ):
            converged = True
            break

    ups = PhiScaleCovariance(sigma2, varpi, dim)
    cov_sandwich = None
    if cfg.with_sandwich and converged:
        cov_sandwich = _structured_sandwich(sys, eta, ups)
    return QmlFit(
        estimator="dqml_x" if sys.basis == "full_x" else "dqml_dx",
        coef=eta,
        omega={"sigma2": sigma2, "varpi": varpi, "phi": ups.phi_head},
        loglik=trace[-1] if trace else -np.inf,
        loglik_trace=np.array(trace),
        cov_sandwich=cov_sandwich,
        iterations=iteration,
        converged=converged,
        extra={"lag_order": sys.lag_order, "basis": sys.basis},
    )


def sandwich_covariance(sys: DifferencedSystem, fit: QmlFit) -> np.ndarray:
    """Robust covariance over (coefficients, covariance coordinates)."""
    if isinstance(fit.omega, dict):
        ups = PhiScaleCovariance(fit.omega["sigma2"], fit.omega["varpi"], sys.n_equations)
        return _structured_sandwich(sys, fit.coef, ups)
    cov = np.asarray(fit.omega, dtype=float)
    return _mlcore.sandwich(
        sys.response, sys.design, fit.coef, cov, _mlcore.unrestricted_basis(cov.shape[0])
    )


def _structured_basis(ups: PhiScaleCovariance) -> list[np.ndarray]:
    head = np.zeros((ups.dim, ups.dim))
    head[0, 0] = 1.0
    return [ups.phi(), ups.sigma2 * np.exp(ups.varpi) * head]


def _structured_sandwich(sys, eta, ups):
    head = np.zeros((ups.dim, ups.dim))
    head[0, 0] = 1.0
    curvature = {
        (0, 1): np.exp(ups.varpi) * head,
        (1, 1): ups.sigma2 * np.exp(ups.varpi) * head,
    }
    return _mlcore.sandwich(
        sys.response, sys.design, eta, ups.matrix(), _structured_basis(ups), curvature
    )


def _diff_score_settled(sys, coef, cov_like, cfg) -> bool:
    if isinstance(cov_like, PhiScaleCovariance):
        cov = cov_like.matrix()
        basis = _structured_basis(cov_like)
    else:
        cov = np.asarray(cov_like, dtype=float)
        basis = _mlcore.unrestricted_basis(cov.shape[0])
    norm = _mlcore.scaled_score_norm(sys.response, sys.design, coef, cov, basis)
    return norm <= 10.0 * cfg.tol


def _maximize_varpi(q_base: float, h_base: float, corner_head: float, dim: int, start: float) -> float:
    """Maximize the varpi profile of the likelihood with the scale concentrated out.

    The profile is g(w) = -dim * log(q(w)) - w up to constants, where
    q(w) = q_base - h_base * tau / (1 + tau * corner_head) is the
    Phi(w)-weighted residual sum of squares expressed through the rank-one
    corner bump tau = exp(w) - 1 - 1/dim; everything is scalar, so Newton
    steps safeguarded by a sign-change bracket cost O(1), with a
    golden-section pass as the fallback if the derivative misbehaves.
    """

    def derivatives(w: float) -> tuple[float, float]:
        tau = math.exp(w) - 1.0 - 1.0 / dim
        denom = 1.0 + tau * corner_head
        q = q_base - (tau / denom) * h_base
        sp = math.exp(w) / (denom * denom)
        qp = -sp * h_base
        spp = sp * (1.0 - 2.0 * math.exp(w) * corner_head / denom)
        qpp = -spp * h_base
        gp = -dim * qp / q - 1.0
        gpp = -dim * (qpp * q - qp * qp) / (q * q)
        return gp, gpp

    lo, hi = start, start
    glo, _ = derivatives(lo)
    ghi = glo
    for step in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        if glo > 0 and ghi > 0:
            hi = start + step
            ghi, _ = derivatives(hi)
        elif glo < 0 and ghi < 0:
            lo = start - step
            glo, _ = derivatives(lo)
        else:
            break
    if not (glo > 0 > ghi):
        return _golden_section(q_base, h_base, corner_head, dim, start - 40.0, start + 40.0)

    w = 0.5 * (lo + hi)
    for _ in range(100):
        gp, gpp = derivatives(w)
        if abs(gp) <= 1e-13 * dim:
            return w
        if gp > 0:
            lo = w
        else:
            hi = w
        w_newton = w - gp / gpp if gpp < 0 else None
        if w_newton is not None and lo < w_newton < hi:
            w = w_newton
        else:
            w = 0.5 * (lo + hi)
        if hi - lo < 1e-14 * (1.0 + abs(w)):
            return w
    return w


def _golden_section(q_base: float, h_base: float, corner_head: float, dim: int,
                    lo: float, hi: float) -> float:
    def neg_profile(w: float) -> float:
        tau = math.exp(w) - 1.0 - 1.0 / dim
        q = q_base - (tau / (1.0 + tau * corner_head)) * h_base
        return dim * math.log(q) + w

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = neg_profile(c), neg_profile(d)
    for _ in range(200):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = neg_profile(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = neg_profile(d)
        if abs(b - a) < 1e-12:
            break
    return 0.5 * (a + b)
