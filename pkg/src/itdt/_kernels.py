"""Hot-path kernels for the streaming detector.

Per-step cost is dominated by the p x p window-moment update and the single
Cholesky factorization of the window covariance. Each kernel exists in two
versions: a numba-compiled one (the default whenever numba is importable) and
a pure-numpy fallback. Setting ``ITDT_NUMBA=0`` (or ``false``/``off``) selects
the numpy path; ``itdt bench`` measures both.

All kernels operate on C-contiguous float64 arrays and mutate their buffer
arguments in place.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


def _numba_requested() -> bool:
    return os.environ.get("ITDT_NUMBA", "1").strip().lower() not in {"0", "false", "off", "no"}


# --- pure numpy ---------------------------------------------------------------

def _push_numpy(buf, head, count, run_sum, run_outer, r):
    cap = buf.shape[0]
    if count == cap:
        old = buf[head]
        run_sum -= old
        run_outer -= np.outer(old, old)
    else:
        count += 1
    buf[head] = r
    run_sum += r
    run_outer += np.outer(r, r)
    return (head + 1) % cap, count


def _moments_numpy(run_sum, run_outer, count, out_mu, out_sigma):
    np.divide(run_sum, count, out=out_mu)
    np.divide(run_outer, count, out=out_sigma)
    out_sigma -= np.outer(out_mu, out_mu)


def _kl_numpy(mu, sigma_hat, sigma_inv, log_det_ref):
    p = mu.shape[0]
    trace = float(np.sum(sigma_inv * sigma_hat))
    quad = float(mu @ sigma_inv @ mu)
    chol = np.linalg.cholesky(sigma_hat)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return 0.5 * (trace - p + quad + (log_det_ref - log_det))


def _recompute_numpy(buf, count, run_sum, run_outer):
    live = buf[:count]
    run_sum[:] = live.sum(axis=0)
    run_outer[:] = live.T @ live


# --- numba --------------------------------------------------------------------

HAVE_NUMBA = False
if _numba_requested():
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False

if HAVE_NUMBA:

    @njit(cache=True)
    def _push_numba(buf, head, count, run_sum, run_outer, r):
        cap = buf.shape[0]
        p = buf.shape[1]
        if count == cap:
            for i in range(p):
                old_i = buf[head, i]
                run_sum[i] -= old_i
                for j in range(p):
                    run_outer[i, j] -= old_i * buf[head, j]
        else:
            count += 1
        for i in range(p):
            buf[head, i] = r[i]
            run_sum[i] += r[i]
        for i in range(p):
            ri = r[i]
            for j in range(p):
                run_outer[i, j] += ri * r[j]
        return (head + 1) % cap, count

    @njit(cache=True)
    def _moments_numba(run_sum, run_outer, count, out_mu, out_sigma):
        p = run_sum.shape[0]
        inv = 1.0 / count
        for i in range(p):
            out_mu[i] = run_sum[i] * inv
        for i in range(p):
            mi = out_mu[i]
            for j in range(p):
                out_sigma[i, j] = run_outer[i, j] * inv - mi * out_mu[j]

    @njit(cache=True)
    def _kl_numba(mu, sigma_hat, sigma_inv, log_det_ref):
        p = mu.shape[0]
        trace = 0.0
        quad = 0.0
        for i in range(p):
            acc = 0.0
            for j in range(p):
                trace += sigma_inv[i, j] * sigma_hat[i, j]
                acc += sigma_inv[i, j] * mu[j]
            quad += mu[i] * acc
        chol = np.linalg.cholesky(sigma_hat)
        log_det = 0.0
        for i in range(p):
            log_det += 2.0 * np.log(chol[i, i])
        return 0.5 * (trace - p + quad + (log_det_ref - log_det))

    @njit(cache=True)
    def _recompute_numba(buf, count, run_sum, run_outer):
        p = buf.shape[1]
        for i in range(p):
            run_sum[i] = 0.0
            for j in range(p):
                run_outer[i, j] = 0.0
        for t in range(count):
            for i in range(p):
                run_sum[i] += buf[t, i]
            for i in range(p):
                bi = buf[t, i]
                for j in range(p):
                    run_outer[i, j] += bi * buf[t, j]


@dataclass(frozen=True)
class Backend:
    """Bundle of the per-step kernels for one execution backend."""

    name: str
    push: callable
    moments: callable
    kl: callable
    recompute: callable


_NUMPY_BACKEND = Backend("numpy", _push_numpy, _moments_numpy, _kl_numpy, _recompute_numpy)

if HAVE_NUMBA:
    _NUMBA_BACKEND = Backend("numba", _push_numba, _moments_numba, _kl_numba, _recompute_numba)
    DEFAULT_BACKEND = _NUMBA_BACKEND
else:
    _NUMBA_BACKEND = None
    DEFAULT_BACKEND = _NUMPY_BACKEND


def available_backends() -> list[str]:
    names = ["numpy"]
    if HAVE_NUMBA:
        names.insert(0, "numba")
    return names


def get_backend(name: str | None = None) -> Backend:
    """Resolve a backend by name; ``None`` gives the environment default."""
    if name is None:
        return DEFAULT_BACKEND
    if name == "numpy":
        return _NUMPY_BACKEND
    if name == "numba":
        if _NUMBA_BACKEND is None:
            raise ValueError("numba backend unavailable (not installed or disabled by ITDT_NUMBA)")
        return _NUMBA_BACKEND
    raise ValueError(f"unknown backend {name!r}")
