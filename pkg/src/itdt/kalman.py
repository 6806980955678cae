"""Steady-state filter construction and the predict/innovate/correct step.

The gain is constant: the a-priori error covariance is the fixed point of
the filter Riccati recursion, found by plain fixed-point iteration starting
from the process-noise covariance. The final residual of the recursion is an
independent certificate that the returned covariance actually solves the
equation, which the test suite checks directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DimensionMismatch, NoConvergence, NonFiniteInput
from .model import StateSpaceModel, SteadyStateFilter

DARE_TOL = 1e-10
DARE_MAX_ITER = 100_000


@dataclass
class FilterState:
    """Per-stream mutable estimator state: one stream, one sequential owner."""

    x_hat: np.ndarray
    step_index: int = 0

    @classmethod
    def initial(cls, n: int) -> "FilterState":
        return cls(x_hat=np.zeros(n), step_index=0)


@dataclass(frozen=True)
class Innovation:
    r: np.ndarray
    step_index: int


def solve_dare(model: StateSpaceModel, tol: float = DARE_TOL,
               max_iter: int = DARE_MAX_ITER) -> np.ndarray:
    """Steady a-priori error covariance P of the filter Riccati recursion.

    Iterates P <- A P A' - A P C' (C P C' + R)^-1 C P A' + Q from P = Q until
    the update moves less than ``tol`` in max-norm. Divergence or stalling
    raises NoConvergence, which in practice signals an undetectable pair.
    """
    a, c, q, r = model.A, model.C, model.Q, model.R
    p_cov = q.copy()
    residual = np.inf
    for _ in range(max_iter):
        s = c @ p_cov @ c.T + r
        s = 0.5 * (s + s.T)
        gain_t = numerics.solve_spd(s, c @ p_cov @ a.T, "innovation covariance")
        p_next = a @ p_cov @ a.T - (a @ p_cov @ c.T) @ gain_t + q
        p_next = 0.5 * (p_next + p_next.T)
        residual = float(np.max(np.abs(p_next - p_cov)))
        p_cov = p_next
        if not np.isfinite(residual):
            raise NoConvergence(max_iter, residual)
        if residual <= tol:
            return p_cov
    raise NoConvergence(max_iter, residual)


def build_filter(model: StateSpaceModel, tol: float = DARE_TOL,
                 max_iter: int = DARE_MAX_ITER) -> SteadyStateFilter:
    """Solve for P, then assemble gain and cached innovation-covariance terms."""
    p_cov = solve_dare(model, tol, max_iter)
    sigma = model.C @ p_cov @ model.C.T + model.R
    sigma = 0.5 * (sigma + sigma.T)
    # K = P C' Sigma^-1, computed through the factorization of Sigma
    gain = numerics.solve_spd(sigma, model.C @ p_cov, "Sigma").T
    return SteadyStateFilter.from_matrices(model, p_cov, gain, sigma)


def step(filt: SteadyStateFilter, state: FilterState, u: np.ndarray,
         y: np.ndarray) -> tuple[FilterState, Innovation]:
    """One predict/innovate/correct cycle.

    ``u`` is the input applied at the previous step (the plant convention is
    x' = A x + B u, y = C x + v, so y at step t is independent of u at t).
    Pass an empty array when the model has no inputs.
    """
    model = filt.model
    u = np.asarray(u, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if u.shape[0] != model.m:
        raise DimensionMismatch(f"input has length {u.shape[0]}, expected {model.m}")
    if y.shape[0] != model.p:
        raise DimensionMismatch(f"measurement has length {y.shape[0]}, expected {model.p}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("filter step received NaN or Inf")

    x_pred = model.A @ state.x_hat
    if model.m:
        x_pred = x_pred + model.B @ u
    r = y - model.C @ x_pred
    x_new = x_pred + filt.K @ r
    new_state = FilterState(x_hat=x_new, step_index=state.step_index + 1)
    return new_state, Innovation(r=r, step_index=new_state.step_index)
