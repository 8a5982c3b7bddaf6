"""Gaussian quasi-likelihood machinery shared by the levels and differenced estimators.

Everything here works on per-individual stacks: a response array of shape
(N, T) and a design array of shape (N, T, d).  The error covariance is a
T x T matrix; its free coordinates are described by a list of symmetric basis
matrices (the derivative of the covariance with respect to each coordinate),
which covers both the unrestricted vech parameterization and structured forms.
Per-individual reductions are accumulated in a fixed order, so results do not
depend on how callers schedule work.
"""

from __future__ import annotations

import numpy as np

from ._linalg import chol_inverse, solve_gram, vech, vech_basis
from .errors import SingularHessianError

LOG_2PI = float(np.log(2.0 * np.pi))


def residual_stack(y: np.ndarray, w: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """(N, T) residuals y_i - W_i @ coef."""
    return y - np.einsum("ntd,d->nt", w, coef)


def gaussian_loglik(y: np.ndarray, w: np.ndarray, coef: np.ndarray, cov: np.ndarray) -> float:
    """Sum over individuals of the Gaussian log density with shared covariance."""
    n, t = y.shape
    cov_inv, logdet = chol_inverse(cov)
    u = residual_stack(y, w, coef)
    quad = float(np.einsum("st,ns,nt->", cov_inv, u, u))
    return -0.5 * n * t * LOG_2PI - 0.5 * n * logdet - 0.5 * quad


def gls_coef(y: np.ndarray, w: np.ndarray, cov_inv: np.ndarray) -> np.ndarray:
    """GLS coefficients via Cholesky of the weighted Gram matrix."""
    wtoi = np.einsum("st,ntd->nsd", cov_inv, w)
    gram = np.einsum("nsd,nse->de", w, wtoi)
    rhs = np.einsum("nsd,ns->d", wtoi, y)
    return solve_gram(gram, rhs)


def score_parts(
    y: np.ndarray,
    w: np.ndarray,
    coef: np.ndarray,
    cov_inv: np.ndarray,
    basis: list[np.ndarray],
) -> np.ndarray:
    """Per-individual score vectors, shape (N, d + len(basis)).

    Coefficient block: W_i' cov_inv u_i.  Covariance block, coordinate k:
    -1/2 tr[(cov_inv - cov_inv u_i u_i' cov_inv) dCov/dk].  For vech
    coordinates this doubles off-diagonal entries, which is what makes the
    score the exact derivative of the log-likelihood along symmetric
    perturbations.
    """
    u = residual_stack(y, w, coef)
    s_coef = np.einsum("ntd,st,ns->nd", w, cov_inv, u)
    ui = u @ cov_inv  # (N, T) rows u_i' cov_inv
    parts = [s_coef]
    for g in basis:
        trace_term = float(np.einsum("st,ts->", cov_inv, g))
        quad = np.einsum("ns,st,nt->n", ui, g, ui)
        parts.append((-0.5 * (trace_term - quad))[:, None])
    return np.concatenate(parts, axis=1)


def hessian_total(
    y: np.ndarray,
    w: np.ndarray,
    coef: np.ndarray,
    cov_inv: np.ndarray,
    basis: list[np.ndarray],
    curvature: dict[tuple[int, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Analytic Hessian of the total log-likelihood, summed over individuals.

    ``curvature`` supplies second derivatives of the covariance for
    parameterizations that are not linear in their coordinates; key (j, k)
    with j <= k maps to d2Cov/(dj dk).
    """
    n = y.shape[0]
    n_cov = len(basis)
    d = w.shape[2]
    u = residual_stack(y, w, coef)
    s_outer = np.einsum("ns,nt->st", u, u)
    r = cov_inv @ s_outer @ cov_inv

    h = np.zeros((d + n_cov, d + n_cov))
    wtoi = np.einsum("st,ntd->nsd", cov_inv, w)
    h[:d, :d] = -np.einsum("nsd,nse->de", w, wtoi)

    cross = np.einsum("nsd,nt->std", w, u)  # sum_i W_i[s, :] u_i[t]
    e_list = [g @ cov_inv for g in basis]
    f_list = [g @ r for g in basis]
    for k, g in enumerate(basis):
        p_k = cov_inv @ g @ cov_inv
        h[:d, d + k] = -np.einsum("st,std->d", p_k, cross)
        h[d + k, :d] = h[:d, d + k]
    for j in range(n_cov):
        for k in range(j, n_cov):
            term1 = float(np.einsum("st,ts->", e_list[j], e_list[k]))
            term2 = float(np.einsum("st,ts->", f_list[j], e_list[k]))
            term3 = float(np.einsum("st,ts->", e_list[j], f_list[k]))
            val = 0.5 * n * term1 - 0.5 * term2 - 0.5 * term3
            if curvature is not None:
                g2 = curvature.get((j, k))
                if g2 is None and j != k:
                    g2 = curvature.get((k, j))
                if g2 is not None:
                    val += -0.5 * n * float(np.einsum("st,ts->", cov_inv, g2))
                    val += 0.5 * float(np.einsum("st,ts->", g2, r))
            h[d + j, d + k] = val
            h[d + k, d + j] = val
    return h


def sandwich(
    y: np.ndarray,
    w: np.ndarray,
    coef: np.ndarray,
    cov: np.ndarray,
    basis: list[np.ndarray],
    curvature: dict[tuple[int, int], np.ndarray] | None = None,
    free: np.ndarray | None = None,
) -> np.ndarray:
    """Robust parameter covariance H^-1 I H^-1 / N.

    H is the average analytic Hessian, I the average outer product of
    per-individual scores.  ``free`` masks coordinates pinned by the fit
    (e.g. a variance component fixed at zero); masked rows and columns of the
    output are zero.
    """
    n = y.shape[0]
    cov_inv, _ = chol_inverse(cov)
    scores = score_parts(y, w, coef, cov_inv, basis)
    h_hat = hessian_total(y, w, coef, cov_inv, basis, curvature) / n
    i_hat = scores.T @ scores / n

    dim = h_hat.shape[0]
    if free is None:
        free = np.ones(dim, dtype=bool)
    idx = np.flatnonzero(free)
    h_sub = h_hat[np.ix_(idx, idx)]
    i_sub = i_hat[np.ix_(idx, idx)]
    try:
        h_inv_i = np.linalg.solve(h_sub, i_sub)
        cov_sub = np.linalg.solve(h_sub.T, h_inv_i.T).T / n
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(str(exc)) from exc
    out = np.zeros((dim, dim))
    out[np.ix_(idx, idx)] = 0.5 * (cov_sub + cov_sub.T)
    return out


def iterated_fgls_path(
    y: np.ndarray,
    w: np.ndarray,
    tol: float,
    max_iter: int,
    settled=None,
    start_weight: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, list[float], int, bool]:
    """Alternate GLS for the coefficients with the residual moment for the covariance.

    Starts from GLS under ``start_weight`` (identity when omitted, i.e. OLS).
    Each full iteration refits the coefficients at the current covariance and
    then the covariance at the new coefficients, so the log-likelihood trace
    is non-decreasing.  Convergence is declared when the largest scaled
    parameter change falls below ``tol`` and the optional ``settled(coef,
    cov)`` guard accepts the iterate.
    """
    n, t = y.shape
    coef = gls_coef(y, w, np.eye(t) if start_weight is None else start_weight)
    cov = _residual_moment(y, w, coef)
    if np.trace(cov) <= 1e-24 * (1.0 + float(np.mean(y**2))):
        # exact fit: the covariance degenerates and the likelihood is unbounded
        return coef, cov, [np.inf], 1, True
    trace: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        cov_inv, _ = chol_inverse(cov)
        coef_new = gls_coef(y, w, cov_inv)
        cov_new = _residual_moment(y, w, coef_new)
        # at the exact residual moment the quadratic form collapses to N * T
        _, logdet_new = chol_inverse(cov_new)
        trace.append(-0.5 * n * t * (LOG_2PI + 1.0) - 0.5 * n * logdet_new)
        change = _rel_change(
            np.concatenate([coef_new, vech(cov_new)]),
            np.concatenate([coef, vech(cov)]),
        )
        coef, cov = coef_new, cov_new
        if change < tol and (settled is None or settled(coef, cov)):
            converged = True
            break
    return coef, cov, trace, iteration, converged


def scaled_score_norm(
    y: np.ndarray,
    w: np.ndarray,
    coef: np.ndarray,
    cov: np.ndarray,
    basis: list[np.ndarray],
    free: np.ndarray | None = None,
) -> float:
    """Max absolute total-score entry over free coordinates, divided by N."""
    cov_inv, _ = chol_inverse(cov)
    total = score_parts(y, w, coef, cov_inv, basis).sum(axis=0)
    if free is not None:
        total = total[free]
    return float(np.max(np.abs(total))) / y.shape[0]


def unrestricted_basis(dim: int) -> list[np.ndarray]:
    """Covariance coordinate basis for the vech parameterization."""
    return vech_basis(dim)


def _residual_moment(y, w, coef):
    u = residual_stack(y, w, coef)
    return np.einsum("ns,nt->st", u, u) / y.shape[0]


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / (1.0 + np.abs(old))))
