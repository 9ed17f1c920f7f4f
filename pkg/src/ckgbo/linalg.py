"""Cholesky factorization with jitter escalation, and its forward derivative."""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg as sla

from .errors import InvalidArgumentError, NumericDegeneracyError

log = logging.getLogger(__name__)

JITTER_LEVELS = (1e-10, 1e-8, 1e-6)


def cholesky_with_jitter(A):
    """Lower Cholesky factor of a symmetric matrix, adding jitter if needed.

    Returns ``(L, jitter)`` with ``L @ L.T == A + jitter * I``.  The plain
    factorization is tried first; on failure the diagonal is inflated by
    each of ``JITTER_LEVELS`` times the mean diagonal in turn.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError("cholesky_with_jitter needs a square matrix")
    scale = max(np.max(np.abs(A)), 1e-300) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    if not np.all(np.isfinite(A)):
        raise NumericDegeneracyError("matrix has non-finite entries")
    A = 0.5 * (A + A.T)
    mean_diag = float(np.mean(np.diag(A))) if A.size else 1.0
    base = mean_diag if mean_diag > 0 else 1.0
    for jitter in (0.0, *(lvl * base for lvl in JITTER_LEVELS)):
        try:
            L = np.linalg.cholesky(A + jitter * np.eye(A.shape[0]))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0) and np.all(np.isfinite(L)):
            if jitter:
                log.debug("cholesky needed jitter %.3e", jitter)
            return L, jitter
    raise NumericDegeneracyError(
        f"cholesky failed even with jitter {JITTER_LEVELS[-1] * base:.3e}"
    )


def _phi(M):
    """Lower triangle of ``M`` with the diagonal halved."""
    out = np.tril(M)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky_derivative(L, dA):
    """Directional derivative of the Cholesky factor.

    For ``A = L L^T`` and a symmetric perturbation direction ``dA`` this
    returns the lower-triangular ``dL`` with ``dL L^T + L dL^T = dA``,
    computed as ``L * Phi(L^-1 dA L^-T)``.
    """
    L = np.asarray(L, dtype=float)
    dA = np.asarray(dA, dtype=float)
    if L.shape != dA.shape or L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InvalidArgumentError("L and dA must be square matrices of equal size")
    diag = np.diag(L)
    if np.any(diag == 0) or not np.all(np.isfinite(diag)):
        raise NumericDegeneracyError("Cholesky factor is singular")
    tmp = sla.solve_triangular(L, dA, lower=True)
    S = sla.solve_triangular(L, tmp.T, lower=True)
    return L @ _phi(S)
