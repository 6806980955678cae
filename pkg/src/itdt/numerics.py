"""Dense symmetric-positive-definite linear algebra used by every other module.

Matrices are plain float64 ndarrays. The heavy lifting is delegated to
LAPACK through numpy/scipy; this module adds the contract checks (symmetry,
positive definiteness, dimension agreement) and the package's error types.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NonFiniteInput,
    NotPositiveDefinite,
)

SYMMETRY_RTOL = 1e-9


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return m


def check_symmetric(m: np.ndarray, name: str = "matrix", rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    scale = max(float(np.max(np.abs(m))), 1e-300)
    if float(np.max(np.abs(m - m.T))) > rtol * scale:
        raise DimensionMismatch(f"{name} is not symmetric within relative tolerance {rtol:g}")
    return m


def _failing_pivot(m: np.ndarray) -> int:
    """Locate the first non-positive pivot of a failed factorization (cold path)."""
    n = m.shape[0]
    a = m.copy()
    for k in range(n):
        piv = a[k, k]
        if piv <= 0.0 or not np.isfinite(piv):
            return k
        a[k, k] = np.sqrt(piv)
        a[k + 1 :, k] /= a[k, k]
        for j in range(k + 1, n):
            a[j:, j] -= a[j:, k] * a[j, k]
    return n - 1


def cholesky(m, name: str = "matrix") -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == m.

    Raises NotPositiveDefinite with the index of the offending pivot, which
    tells callers that regularization is required.
    """
    m = check_symmetric(m, name)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(_failing_pivot(m), f"{name} is not positive definite") from None


def log_det_spd(m, name: str = "matrix") -> float:
    """log(det(m)) via the Cholesky factor; m must be positive definite."""
    chol = cholesky(m, name)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def solve_spd(m, rhs, name: str = "matrix") -> np.ndarray:
    """Solve m @ x = rhs for positive definite m without forming an inverse."""
    chol = cholesky(m, name)
    b = np.asarray(rhs, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b.reshape(-1, 1)
    if b.shape[0] != m.shape[0]:
        raise DimensionMismatch(
            f"right-hand side has {b.shape[0]} rows, expected {m.shape[0]}"
        )
    if not np.all(np.isfinite(b)):
        raise NonFiniteInput("right-hand side contains NaN or Inf")
    y = solve_triangular(chol, b, lower=True)
    x = solve_triangular(chol.T, y, lower=False)
    return x.ravel() if squeeze else x


def inv_spd(m, name: str = "matrix") -> np.ndarray:
    """Explicit inverse of a positive definite matrix, symmetrized."""
    inv = solve_spd(m, np.eye(m.shape[0]), name)
    return 0.5 * (inv + inv.T)


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD (U, s, V) with U @ diag(s) @ V.T == m and s descending."""
    m = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge: {exc}") from None
    return u, s, vt.T


def is_spd(m) -> bool:
    try:
        cholesky(m)
        return True
    except (NotPositiveDefinite, DimensionMismatch, NonFiniteInput):
        return False


def clip_to_spd(m: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Project a symmetric matrix to the SPD cone by clipping eigenvalues."""
    sym = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(sym)
    clipped = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (clipped + clipped.T)


def spectral_radius_estimate(a: np.ndarray, iterations: int = 200) -> float:
    """Spectral radius bound by power iteration with a geometric-mean tail.

    Deterministic start vector; the geometric mean over the final half of the
    growth ratios damps the oscillation produced by complex eigenvalue pairs.
    """
    a = as_matrix(a, "A")
    n = a.shape[0]
    v = 1.0 + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    log_ratios = []
    for _ in range(iterations):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        log_ratios.append(np.log(norm))
        v = w / norm
    tail = log_ratios[len(log_ratios) // 2 :]
    return float(np.exp(np.mean(tail)))
