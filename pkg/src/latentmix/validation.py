"""Input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_square",
    "check_correlation_matrix",
    "check_dissimilarity_matrix",
    "check_spd",
]


def check_square(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def check_correlation_matrix(m, atol=1e-8):
    m = check_square(m, "correlation matrix")
    if not np.allclose(m, m.T, atol=atol):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(m), 1.0, atol=atol):
        raise ValueError("correlation matrix must have a unit diagonal")
    if np.any(m < -1 - atol) or np.any(m > 1 + atol):
        raise ValueError("correlation entries must lie in [-1, 1]")
    return m


def check_dissimilarity_matrix(m, atol=1e-8):
    m = check_square(m, "dissimilarity matrix")
    if not np.allclose(m, m.T, atol=atol):
        raise ValueError("dissimilarity matrix must be symmetric")
    if not np.allclose(np.diag(m), 0.0, atol=atol):
        raise ValueError("dissimilarity matrix must have a zero diagonal")
    if np.any(m < -atol):
        raise ValueError("dissimilarities must be nonnegative")
    return m


def check_spd(m, name="matrix"):
    m = check_square(m, name)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not symmetric positive definite") from exc
    return m
