"""Shared linear-algebra helpers: vech layout, guarded Cholesky solves."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, RankDeficientError


def vech_index_pairs(dim: int) -> list[tuple[int, int]]:
    """(row, col) pairs of the lower triangle, stacked column-major."""
    return [(s, t) for t in range(dim) for s in range(t, dim)]


def vech(mat: np.ndarray) -> np.ndarray:
    """Half-vectorize a symmetric matrix (lower triangle, column-major)."""
    dim = mat.shape[0]
    return np.array([mat[s, t] for s, t in vech_index_pairs(dim)])


def unvech(vec: np.ndarray, dim: int) -> np.ndarray:
    """Rebuild the symmetric matrix whose vech is ``vec``."""
    mat = np.zeros((dim, dim))
    for k, (s, t) in enumerate(vech_index_pairs(dim)):
        mat[s, t] = vec[k]
        mat[t, s] = vec[k]
    return mat


def vech_basis(dim: int) -> list[np.ndarray]:
    """Symmetric basis matrices, one per vech coordinate.

    Coordinate k perturbs both mirrored entries at once, so these are the
    derivatives of the full matrix with respect to its vech coordinates.
    """
    basis = []
    for s, t in vech_index_pairs(dim):
        g = np.zeros((dim, dim))
        g[s, t] = 1.0
        g[t, s] = 1.0
        basis.append(g)
    return basis


def chol_inverse(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of an SPD matrix via Cholesky.

    Raises NotPositiveDefiniteError if the factorization fails.
    """
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    inv = scipy.linalg.cho_solve((chol, True), np.eye(mat.shape[0]))
    return inv, logdet


def solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve gram @ x = rhs for an SPD Gram matrix, never forming an inverse.

    On a singular Gram matrix, diagnoses the deficient columns via pivoted QR
    and raises RankDeficientError with those indices.
    """
    try:
        chol = scipy.linalg.cho_factor(gram)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        _, r, piv = scipy.linalg.qr(gram, pivoting=True)
        diag = np.abs(np.diag(r))
        tol = gram.shape[0] * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
        rank = int(np.sum(diag > tol))
        raise RankDeficientError(piv[rank:].tolist()) from None
    return scipy.linalg.cho_solve(chol, rhs)
