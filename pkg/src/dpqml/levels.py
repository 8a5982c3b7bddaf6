"""Levels quasi maximum likelihood for the augmented dynamic panel model.

Two estimation paths share one likelihood: iterated feasible GLS with an
unrestricted T x T error covariance, and an expectation / conditional
maximization (ECME) algorithm for the structured covariance
sigma_a^2 * ones + diag(sigma_1^2, ..., sigma_T^2).  Both return robust
sandwich parameter covariances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _mlcore
from ._linalg import vech
from .errors import NotPositiveDefiniteError
from .panel import AugmentedDesign
from .results import QmlFit


@dataclass(frozen=True)
class StructuredCovariance:
    """Rank-one-plus-diagonal error covariance.

    The inverse and log-determinant use the rank-one update of the diagonal
    inverse, which is exact and O(T): with S = sum_t 1/sigma_t^2,
    inv = diag(1/sigma_t^2) - sigma_a^2/(1 + sigma_a^2 S) * outer, and
    logdet = sum_t log sigma_t^2 + log(1 + sigma_a^2 S).
    """

    sigma_a2: float
    sigma_t2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma_t2", np.asarray(self.sigma_t2, dtype=float))
        if self.sigma_a2 < 0:
            raise ValueError("sigma_a2 must be non-negative")
        if np.any(self.sigma_t2 <= 0):
            raise NotPositiveDefiniteError("all idiosyncratic variances must be positive")

    @property
    def dim(self) -> int:
        return self.sigma_t2.shape[0]

    def matrix(self) -> np.ndarray:
        return self.sigma_a2 + np.diag(self.sigma_t2)

    def inverse(self) -> np.ndarray:
        sinv = 1.0 / self.sigma_t2
        denom = 1.0 + self.sigma_a2 * sinv.sum()
        return np.diag(sinv) - (self.sigma_a2 / denom) * np.outer(sinv, sinv)

    def logdet(self) -> float:
        sinv = 1.0 / self.sigma_t2
        return float(np.sum(np.log(self.sigma_t2)) + np.log1p(self.sigma_a2 * sinv.sum()))

    def weight_vector(self) -> np.ndarray:
        """inverse() @ ones, in O(T)."""
        sinv = 1.0 / self.sigma_t2
        return sinv / (1.0 + self.sigma_a2 * sinv.sum())

    def effect_posterior_variance(self) -> float:
        """sigma_a2 * (1 - sigma_a2 * ones' inverse() ones), in O(T)."""
        sinv = 1.0 / self.sigma_t2
        return self.sigma_a2 / (1.0 + self.sigma_a2 * sinv.sum())

    def coords(self) -> np.ndarray:
        return np.concatenate([[self.sigma_a2], self.sigma_t2])

    def basis(self) -> list[np.ndarray]:
        t = self.dim
        out = [np.ones((t, t))]
        for k in range(t):
            g = np.zeros((t, t))
            g[k, k] = 1.0
            out.append(g)
        return out


OmegaLike = Union[np.ndarray, StructuredCovariance]


@dataclass(frozen=True)
class LevelsParams:
    """Coefficients plus error covariance for the levels likelihood."""

    gamma: np.ndarray
    omega: OmegaLike

    def omega_matrix(self) -> np.ndarray:
        if isinstance(self.omega, StructuredCovariance):
            return self.omega.matrix()
        return np.asarray(self.omega, dtype=float)

    def omega_basis(self) -> list[np.ndarray]:
        if isinstance(self.omega, StructuredCovariance):
            return self.omega.basis()
        return _mlcore.unrestricted_basis(self.omega_matrix().shape[0])

    def omega_coords(self) -> np.ndarray:
        if isinstance(self.omega, StructuredCovariance):
            return self.omega.coords()
        return vech(self.omega_matrix())


@dataclass(frozen=True)
class FitConfig:
    """Iteration controls shared by both levels fitting algorithms."""

    tol: float = 1e-8
    max_iter: int = 5000
    rho_zero_threshold: float = 0.01
    init: str = "ols"
    with_sandwich: bool = True


def quasi_loglik(design: AugmentedDesign, params: LevelsParams) -> float:
    """Gaussian quasi log-likelihood summed over individuals."""
    return _mlcore.gaussian_loglik(
        design.response, design.design, params.gamma, params.omega_matrix()
    )


def score(design: AugmentedDesign, params: LevelsParams) -> np.ndarray:
    """Total score stacked as (coefficient block, covariance block).

    The covariance block is the exact derivative along symmetric
    perturbations of the covariance coordinates, so it matches central finite
    differences of :func:`quasi_loglik` coordinate by coordinate.
    """
    cov = params.omega_matrix()
    cov_inv, _ = _mlcore.chol_inverse(cov)
    parts = _mlcore.score_parts(
        design.response, design.design, params.gamma, cov_inv, params.omega_basis()
    )
    return parts.sum(axis=0)


def fgls_step(design: AugmentedDesign, omega: OmegaLike) -> np.ndarray:
    """GLS coefficients at a fixed error covariance."""
    if isinstance(omega, StructuredCovariance):
        cov_inv = omega.inverse()
    else:
        cov_inv, _ = _mlcore.chol_inverse(np.asarray(omega, dtype=float))
    return _mlcore.gls_coef(design.response, design.design, cov_inv)


def omega_update_unrestricted(design: AugmentedDesign, gamma: np.ndarray) -> np.ndarray:
    """Average residual outer product, the conditional maximizer over the covariance."""
    u = _mlcore.residual_stack(design.response, design.design, gamma)
    return np.einsum("ns,nt->st", u, u) / design.n_individuals


def ecme_estep(design: AugmentedDesign, current: LevelsParams) -> tuple[np.ndarray, float]:
    """Conditional mean (per individual) and variance of the latent effect."""
    if not isinstance(current.omega, StructuredCovariance):
        raise TypeError("E-step requires the structured covariance form")
    omega = current.omega
    u = _mlcore.residual_stack(design.response, design.design, current.gamma)
    a = omega.sigma_a2 * (u @ omega.weight_vector())
    return a, omega.effect_posterior_variance()


def ecme_cm1(
    design: AugmentedDesign,
    current: LevelsParams,
    a: np.ndarray,
    v: float,
) -> StructuredCovariance:
    """Variance-component update given the imputed effects.

    Both outputs are sums of squares plus the non-negative posterior
    variance, so non-negativity holds by construction.
    """
    u = _mlcore.residual_stack(design.response, design.design, current.gamma)
    sigma_a2 = v + float(np.mean(a**2))
    sigma_t2 = v + np.mean((u - a[:, None]) ** 2, axis=0)
    return StructuredCovariance(sigma_a2=sigma_a2, sigma_t2=sigma_t2)


def ecme_cm2(design: AugmentedDesign, variance_plus: StructuredCovariance) -> np.ndarray:
    """Coefficient update: GLS at the updated covariance."""
    return fgls_step(design, variance_plus)


def mean_error_correlation(omega: StructuredCovariance) -> float:
    """Average implied cross-period error correlation of the structured form."""
    d = omega.sigma_a2 + omega.sigma_t2
    t = d.shape[0]
    inv_sqrt = 1.0 / np.sqrt(d)
    pair_sum = 0.5 * (inv_sqrt.sum() ** 2 - np.sum(1.0 / d)) * omega.sigma_a2
    return float(2.0 * pair_sum / (t * (t - 1)))


def fit_iterated_fgls(design: AugmentedDesign, cfg: FitConfig = FitConfig()) -> QmlFit:
    """Quasi-ML with unrestricted covariance by alternating exact conditional maximizers.

    Runs from two deterministic starting weightings (identity, and a
    heavy-common-component matrix) and keeps the run that ends at the higher
    quasi log-likelihood; the alternation only finds local maxima and the
    identity start can stall in an inferior basin on persistent designs.
    """
    y, w = design.response, design.design
    if y.shape[0] <= y.shape[1] + w.shape[2]:
        warnings.warn(
            "few individuals relative to the parameter count; "
            "the unrestricted covariance fit may be ill-conditioned"
        )
    guard = lambda c, v: _score_settled(design, c, v, False, cfg)  # noqa: E731
    runs = []
    for start in (None, _heavy_start_weight(y, w)):
        runs.append(
            _mlcore.iterated_fgls_path(y, w, cfg.tol, cfg.max_iter, settled=guard, start_weight=start)
        )
    coef, cov, trace, iters, converged = max(runs, key=lambda r: r[2][-1])
    cov_sandwich = None
    if cfg.with_sandwich and converged:
        cov_sandwich = _mlcore.sandwich(y, w, coef, cov, _mlcore.unrestricted_basis(cov.shape[0]))
    return QmlFit(
        estimator="lqml_unrestricted",
        coef=coef,
        omega=cov,
        loglik=trace[-1],
        loglik_trace=np.array(trace),
        cov_sandwich=cov_sandwich,
        iterations=iters,
        converged=converged,
        extra={"lag_order": design.lag_order},
    )


def _heavy_start_weight(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Precision of an equal-split common-plus-idiosyncratic covariance at OLS scale."""
    t = y.shape[1]
    coef = _mlcore.gls_coef(y, w, np.eye(t))
    u = y - np.einsum("ntd,d->nt", w, coef)
    scale = 0.5 * float(np.mean(u**2))
    return StructuredCovariance(scale, np.full(t, scale)).inverse()


def fit_ecme(design: AugmentedDesign, cfg: FitConfig = FitConfig()) -> QmlFit:
    """Structured-covariance quasi-ML via E-step, variance CM-step, coefficient CM-step.

    After each variance update the average implied error correlation is
    evaluated; once it falls below ``cfg.rho_zero_threshold`` the effect
    variance is pinned to zero for the rest of the fit (and flagged), after
    which the algorithm reduces to iterated weighted least squares.

    The climb runs from two deterministic variance splits of the initial
    residual scale (a moment-matched one and an effect-heavy one) and keeps
    the run ending at the higher quasi log-likelihood: on persistent designs
    the moment-matched start can be captured by an inferior local maximum in
    which the effect variance collapses.  Every few cycles an extrapolated
    parameter jump is tried and kept only when it raises the actual
    likelihood, which shortens the slow tail of the climb without touching
    its fixed points or the monotone trace.
    """
    y, w = design.response, design.design
    n, t = y.shape
    d = w.shape[2]
    w2 = w.reshape(n * t, d)

    # cached cross products make each GLS step O(T^2 d^2) instead of O(N T^2 d^2)
    p_flat = np.tensordot(w, w, axes=([0], [0])).transpose(0, 2, 1, 3).reshape(t * t, d * d)
    q_flat = np.tensordot(w, y, axes=([0], [0])).transpose(0, 2, 1).reshape(t * t, d)

    def fgls_fast(cov_inv: np.ndarray) -> np.ndarray:
        flat = cov_inv.ravel()
        gram = (flat @ p_flat).reshape(d, d)
        rhs = flat @ q_flat
        return _mlcore.solve_gram(gram, rhs)

    def loglik_at(sigma_a2: float, sigma_t2: np.ndarray, u: np.ndarray) -> float:
        om = StructuredCovariance(sigma_a2, sigma_t2)
        return (
            -0.5 * n * t * _mlcore.LOG_2PI
            - 0.5 * n * om.logdet()
            - 0.5 * _structured_quadratic(om, u)
        )

    gamma0 = fgls_fast(np.eye(t))
    u0 = y - (w2 @ gamma0).reshape(n, t)
    var_t = np.mean(u0**2, axis=0)
    moment = u0.T @ u0 / n
    off_mean = (moment.sum() - np.trace(moment)) / (t * (t - 1))
    pooled = float(np.mean(u0**2))
    starts = [
        (max(0.0, float(off_mean)), var_t),
        (0.5 * pooled, np.full(t, 0.5 * pooled)),
    ]

    def cycle(gamma, sigma_a2, sigma_t2, u, zeroed):
        """One E-step / CM1 / CM2 pass with the zeroing rule on the CM1 output."""
        sinv = 1.0 / sigma_t2
        denom = 1.0 + sigma_a2 * sinv.sum()
        a = (sigma_a2 / denom) * (u @ sinv)
        v = sigma_a2 / denom
        sigma_a2_new = v + float(a @ a) / n
        resid = u - a[:, None]
        sigma_t2_new = v + np.einsum("nt,nt->t", resid, resid) / n
        if not zeroed and mean_error_correlation(
            StructuredCovariance(sigma_a2_new, sigma_t2_new)
        ) < cfg.rho_zero_threshold:
            zeroed = True
        if zeroed:
            sigma_a2_new = 0.0
        omega_plus = StructuredCovariance(sigma_a2_new, sigma_t2_new)
        gamma_new = fgls_fast(omega_plus.inverse())
        u_new = y - (w2 @ gamma_new).reshape(n, t)
        return gamma_new, sigma_a2_new, sigma_t2_new, u_new, zeroed

    def climb(sigma_a2: float, sigma_t2: np.ndarray):
        gamma = gamma0
        u = u0
        zeroed = sigma_a2 == 0.0
        trace: list[float] = []
        converged = False
        iteration = 0
        while iteration < cfg.max_iter:
            state0 = np.concatenate([gamma, [sigma_a2], sigma_t2])
            gamma, sigma_a2, sigma_t2, u, zeroed = cycle(gamma, sigma_a2, sigma_t2, u, zeroed)
            iteration += 1

            # extrapolation attempt, kept only on an actual-likelihood increase
            if not zeroed and iteration % 3 == 0 and iteration + 1 < cfg.max_iter:
                g1, sa1, st1, u1, z1 = cycle(gamma, sigma_a2, sigma_t2, u, zeroed)
                iteration += 1
                if not z1:
                    th0 = state0
                    th1 = np.concatenate([gamma, [sigma_a2], sigma_t2])
                    th2 = np.concatenate([g1, [sa1], st1])
                    r = th1 - th0
                    vdiff = (th2 - th1) - r
                    vnorm = float(vdiff @ vdiff)
                    if vnorm > 0:
                        alpha = -math.sqrt(float(r @ r) / vnorm)
                        cand = th0 - 2.0 * alpha * r + alpha * alpha * vdiff
                        sa_c, st_c = cand[d], cand[d + 1 :]
                        if sa_c > 0 and np.all(st_c > 0):
                            u_c = y - (w2 @ cand[:d]).reshape(n, t)
                            if loglik_at(sa_c, st_c, u_c) >= loglik_at(sa1, st1, u1):
                                g1, sa1, st1, u1 = cand[:d], float(sa_c), st_c, u_c
                gamma, sigma_a2, sigma_t2, u, zeroed = g1, sa1, st1, u1, z1

            trace.append(loglik_at(sigma_a2, sigma_t2, u))
            state1 = np.concatenate([gamma, [sigma_a2], sigma_t2])
            change = float(np.max(np.abs(state1 - state0) / (1.0 + np.abs(state0))))
            if change < cfg.tol and _structured_score_small(
                u, StructuredCovariance(sigma_a2, sigma_t2), zeroed, 10.0 * cfg.tol * n
            ):
                converged = True
                break
        return gamma, sigma_a2, sigma_t2, trace, iteration, converged, zeroed

    runs = [climb(sa, st.copy()) for sa, st in starts]
    gamma, sigma_a2, sigma_t2, trace, iteration, converged, zeroed = max(
        runs, key=lambda r: r[3][-1] if r[3] else -np.inf
    )

    omega_final = StructuredCovariance(sigma_a2, sigma_t2)
    cov_sandwich = None
    if cfg.with_sandwich and converged:
        cov_sandwich = _structured_sandwich(design, gamma, omega_final, zeroed)
    return QmlFit(
        estimator="lqml_ecme",
        coef=gamma,
        omega={"sigma_a2": sigma_a2, "sigma_t2": sigma_t2.copy()},
        loglik=trace[-1] if trace else -np.inf,
        loglik_trace=np.array(trace),
        cov_sandwich=cov_sandwich,
        iterations=iteration,
        converged=converged,
        sigma_a_zeroed=zeroed,
        extra={"lag_order": design.lag_order},
    )


def sandwich_covariance(design: AugmentedDesign, fit: QmlFit) -> np.ndarray:
    """Robust covariance of the full parameter vector at a converged fit.

    Coordinates are the coefficients followed by the covariance coordinates:
    vech entries for the unrestricted form, (effect variance, per-period
    variances) for the structured form.  A zeroed effect variance is treated
    as pinned: its row and column are zero.
    """
    if isinstance(fit.omega, dict):
        omega = StructuredCovariance(fit.omega["sigma_a2"], np.asarray(fit.omega["sigma_t2"]))
        return _structured_sandwich(design, fit.coef, omega, fit.sigma_a_zeroed)
    cov = np.asarray(fit.omega, dtype=float)
    return _mlcore.sandwich(
        design.response, design.design, fit.coef, cov, _mlcore.unrestricted_basis(cov.shape[0])
    )


def _structured_sandwich(design, gamma, omega, zeroed):
    free = np.ones(gamma.shape[0] + 1 + omega.dim, dtype=bool)
    if zeroed:
        free[gamma.shape[0]] = False
    return _mlcore.sandwich(
        design.response, design.design, gamma, omega.matrix(), omega.basis(), free=free
    )


def _score_settled(design, coef, omega, zeroed, cfg) -> bool:
    """Stationarity guard: declare convergence only once the scaled score is small.

    Keeps the fixed-point contract max|score|/N <= 10 * tol independent of how
    slowly the parameter path itself is moving.
    """
    if isinstance(omega, StructuredCovariance):
        basis = omega.basis()
        cov = omega.matrix()
        free = np.ones(coef.shape[0] + len(basis), dtype=bool)
        if zeroed:
            free[coef.shape[0]] = False
    else:
        cov = np.asarray(omega, dtype=float)
        basis = _mlcore.unrestricted_basis(cov.shape[0])
        free = None
    norm = _mlcore.scaled_score_norm(design.response, design.design, coef, cov, basis, free)
    return norm <= 10.0 * cfg.tol


def _structured_score_small(
    u: np.ndarray, omega: StructuredCovariance, zeroed: bool, bound: float
) -> bool:
    """Closed-form variance-score check at a post-CM2 iterate, O(N T).

    The coefficient block vanishes there by construction (the GLS solve zeroes
    it), so only the variance coordinates need testing.
    """
    n = u.shape[0]
    sinv = 1.0 / omega.sigma_t2
    denom = 1.0 + omega.sigma_a2 * sinv.sum()
    wv = sinv / denom
    r = u * sinv - (omega.sigma_a2 / denom) * (u @ sinv)[:, None] * sinv[None, :]
    diag_inv = sinv - (omega.sigma_a2 / denom) * sinv**2
    score_t = -0.5 * (n * diag_inv - np.sum(r**2, axis=0))
    worst = float(np.max(np.abs(score_t)))
    if not zeroed:
        score_a = -0.5 * (n * wv.sum() - float(np.sum((u @ wv) ** 2)))
        worst = max(worst, abs(score_a))
    return worst <= bound


def _structured_quadratic(omega: StructuredCovariance, u: np.ndarray) -> float:
    sinv = 1.0 / omega.sigma_t2
    base = float(np.einsum("nt,t,nt->", u, sinv, u))
    proj = u @ sinv
    denom = 1.0 + omega.sigma_a2 * sinv.sum()
    return base - (omega.sigma_a2 / denom) * float(np.sum(proj**2))


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / (1.0 + np.abs(old))))
