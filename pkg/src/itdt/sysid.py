"""Data-driven identification of the plant from attack-free logs.

The pipeline is the standard open-loop subspace method (N4SID family):

1. z-score all channels with training statistics (stored for inference),
2. oblique projection of future outputs onto past data along future inputs
   (orthogonal projection onto past outputs when there are no inputs),
3. SVD of the projection; singular-value gap selects the order,
4. A and C from shift invariance of the extended observability matrix,
5. B and the initial state by linear regression of the simulated response,
6. Q and R by autocovariance least squares on the stochastic output part:
   the state covariance enters through the discrete Lyapunov map, so Q is
   fitted directly instead of being recovered by ill-conditioned subtraction.

Residual whiteness of the resulting filter is reported per channel and lag
via the Ljung-Box portmanteau statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.stats import chi2

from . import kalman, numerics
from .errors import (
    DegenerateSpectrum,
    InsufficientData,
    InvalidArgument,
    NumericalFailure,
    UnstableModel,
)
from .model import Scaling, StateSpaceModel, SteadyStateFilter

DEFAULT_MAX_ORDER = 30
SV_RELATIVE_FLOOR = 1e-8
SV_ABSOLUTE_FLOOR = 1e-12
TIMESTAMP_JITTER = 0.01


# --- order-selection strategies ------------------------------------------------

@dataclass(frozen=True)
class MaxGapRatio:
    """Pick the largest ratio between consecutive singular values."""


@dataclass(frozen=True)
class EnergyThreshold:
    fraction: float


@dataclass(frozen=True)
class Fixed:
    order: int


OrderStrategy = MaxGapRatio | EnergyThreshold | Fixed


@dataclass(frozen=True)
class OrderSelection:
    order: int
    low_confidence: bool = False


@dataclass
class TrainingLog:
    """Uniformly sampled input/output record. ``U`` may have zero columns."""

    timestamps: np.ndarray
    U: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).ravel()
        self.U = np.ascontiguousarray(np.atleast_2d(self.U), dtype=np.float64)
        self.Y = np.ascontiguousarray(np.atleast_2d(self.Y), dtype=np.float64)
        if self.U.shape[0] != len(self.timestamps) and self.U.size == 0:
            self.U = np.zeros((len(self.timestamps), 0))
        t = len(self.timestamps)
        if self.Y.shape[0] != t or self.U.shape[0] != t:
            raise InvalidArgument(
                f"timestamps ({t}), U ({self.U.shape[0]}) and Y ({self.Y.shape[0]}) disagree"
            )
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.Y))):
            raise InvalidArgument("training log contains NaN or Inf (fill gaps before identification)")
        deltas = np.diff(self.timestamps)
        if len(deltas):
            if np.any(deltas <= 0):
                bad = int(np.argmax(deltas <= 0))
                raise InvalidArgument(f"timestamps not strictly increasing at row {bad + 1}")
            mean_dt = float(np.mean(deltas))
            if np.max(np.abs(deltas - mean_dt)) > TIMESTAMP_JITTER * mean_dt:
                raise InvalidArgument("sampling period varies by more than 1%")

    @property
    def T(self) -> int:
        return len(self.timestamps)

    @property
    def sample_period(self) -> float:
        if self.T < 2:
            return 1.0
        return float(np.mean(np.diff(self.timestamps)))


@dataclass
class LjungBoxReport:
    """Portmanteau whiteness diagnostics, per channel and aggregated.

    ``statistic`` and ``p_value`` are (lags x channels); ``min_p_per_lag``
    is the worst channel at each lag, the figure the reports quote.
    """

    lags: np.ndarray
    statistic: np.ndarray
    p_value: np.ndarray
    min_p_per_lag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.min_p_per_lag = self.p_value.min(axis=1)


@dataclass
class IdentificationResult:
    model: StateSpaceModel
    filter: SteadyStateFilter
    scaling: Scaling
    order: int
    horizon: int
    hankel_singular_values: np.ndarray
    fit_score: np.ndarray
    residual_diagnostics: LjungBoxReport | None
    low_confidence: bool = False
    x0: np.ndarray | None = None


# --- Hankel construction -------------------------------------------------------

def block_hankel(series: np.ndarray, block_rows: int, columns: int) -> np.ndarray:
    """Stack ``block_rows`` shifted copies of a (T, c) series into (c*rows, columns)."""
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    if series.shape[0] < series.shape[1] and series.shape[0] == 1:
        series = series.T
    t, c = series.shape
    if columns < 1 or block_rows < 1:
        raise InvalidArgument("block_rows and columns must be positive")
    if block_rows + columns - 1 > t:
        raise InsufficientData(block_rows + columns - 1, t)
    out = np.empty((c * block_rows, columns))
    for k in range(block_rows):
        out[k * c : (k + 1) * c, :] = series[k : k + columns, :].T
    return out


def build_hankel(series: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Past/future block-Hankel pair with ``horizon`` block rows each.

    Column count is T - 2*horizon + 1, so past and future together consume
    the whole series exactly once.
    """
    if horizon < 2:
        raise InvalidArgument("horizon must be at least 2")
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    if series.shape[0] == 1:
        series = series.T
    t = series.shape[0]
    if t < 2 * horizon:
        raise InsufficientData(2 * horizon, t)
    j = t - 2 * horizon + 1
    full = block_hankel(series, 2 * horizon, j)
    c = series.shape[1]
    return full[: horizon * c], full[horizon * c :]


# --- order selection -----------------------------------------------------------

def select_order(singular_values: np.ndarray, strategy: OrderStrategy = MaxGapRatio()) -> OrderSelection:
    s = np.asarray(singular_values, dtype=np.float64).ravel()
    if s.size == 0:
        raise DegenerateSpectrum("empty singular value list")
    if np.any(np.diff(s) > 1e-12 * max(s[0], 1.0)):
        raise InvalidArgument("singular values must be sorted descending")
    if s[0] < SV_ABSOLUTE_FLOOR:
        raise DegenerateSpectrum(f"all singular values below {SV_ABSOLUTE_FLOOR:g}")

    if isinstance(strategy, Fixed):
        if strategy.order < 1:
            raise InvalidArgument("fixed order must be >= 1")
        if strategy.order > s.size:
            raise InvalidArgument(f"fixed order {strategy.order} exceeds {s.size} singular values")
        return OrderSelection(strategy.order)

    if isinstance(strategy, EnergyThreshold):
        frac = strategy.fraction
        if not 0.0 < frac <= 1.0:
            raise InvalidArgument("energy fraction must be in (0, 1]")
        energy = np.cumsum(s**2) / np.sum(s**2)
        order = int(np.searchsorted(energy, frac - 1e-15)) + 1
        return OrderSelection(min(order, s.size))

    # MaxGapRatio, restricted to values above the relative floor
    if s.size == 1:
        return OrderSelection(1, low_confidence=True)
    valid = s[:-1] >= SV_RELATIVE_FLOOR * s[0]
    ratios = np.where(valid, s[:-1] / np.maximum(s[1:], SV_ABSOLUTE_FLOOR), -np.inf)
    best = float(np.max(ratios))
    order = int(np.argmax(ratios)) + 1
    finite = ratios[np.isfinite(ratios)]
    low_confidence = bool(finite.size and (np.max(finite) - np.min(finite)) <= 1e-12 * max(best, 1.0))
    return OrderSelection(order, low_confidence=low_confidence)


# --- core projections ----------------------------------------------------------

def _oblique_projection(y_future: np.ndarray, w_past: np.ndarray, u_future: np.ndarray) -> np.ndarray:
    """Project the rows of y_future onto w_past along u_future (LQ based)."""
    if u_future.shape[0] == 0:
        return y_future @ np.linalg.pinv(w_past) @ w_past
    stacked = np.vstack([u_future, w_past, y_future])
    low = np.linalg.qr(stacked.T, mode="reduced")[1].T
    nu, nw = u_future.shape[0], w_past.shape[0]
    l22 = low[nu : nu + nw, nu : nu + nw]
    l32 = low[nu + nw :, nu : nu + nw]
    return l32 @ np.linalg.pinv(l22) @ w_past


def _estimate_b_x0(a: np.ndarray, c: np.ndarray, u: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares B and x0 from the simulated input response.

    The output is linear in (B, x0): y_t = C A^t x0 + sum_l C M_t^l B[:, l]
    with M^l following M <- A M + u_l I. Solved as one tall regression.
    """
    t_len, m = u.shape
    p, n = c.shape
    if m == 0:
        # no inputs: only x0 to fit
        g = np.zeros((t_len * p, n))
        a_t = np.eye(n)
        for t in range(t_len):
            g[t * p : (t + 1) * p] = c @ a_t
            a_t = a @ a_t
        x0, *_ = np.linalg.lstsq(g, y.ravel(), rcond=None)
        return np.zeros((n, 0)), x0
    cols = n * m + n
    g = np.zeros((t_len * p, cols))
    m_acc = [np.zeros((n, n)) for _ in range(m)]
    a_t = np.eye(n)
    for t in range(t_len):
        base = t * p
        for l in range(m):
            g[base : base + p, l * n : (l + 1) * n] = c @ m_acc[l]
        g[base : base + p, n * m :] = c @ a_t
        u_t = u[t]
        for l in range(m):
            m_acc[l] = a @ m_acc[l] + u_t[l] * np.eye(n)
        a_t = a @ a_t
    theta, *_ = np.linalg.lstsq(g, y.ravel(), rcond=None)
    b = theta[: n * m].reshape(m, n).T
    return b, theta[n * m :]


def _sym_basis(n: int) -> list[np.ndarray]:
    basis = []
    for a in range(n):
        for b in range(a, n):
            e = np.zeros((n, n))
            e[a, b] = e[b, a] = 1.0
            basis.append(e)
    return basis


def _estimate_qr(a: np.ndarray, c: np.ndarray, y_stoch: np.ndarray, lags: int) -> tuple[np.ndarray, np.ndarray]:
    """Autocovariance least squares for (Q, R) given fixed (A, C).

    Matches sample output autocovariances Lam_k against C A^k Pi(Q) C' (+ R at
    lag 0) where Pi(Q) solves the discrete Lyapunov equation; linear in the
    symmetric parametrizations of Q and R. Results are clipped to the SPD
    cone at 1e-10.
    """
    t_len, p = y_stoch.shape
    n = a.shape[0]
    yc = y_stoch - y_stoch.mean(axis=0)
    lam = [yc[k:].T @ yc[: t_len - k] / (t_len - k) for k in range(lags + 1)]
    lam[0] = 0.5 * (lam[0] + lam[0].T)

    q_basis = _sym_basis(n)
    r_basis = _sym_basis(p)
    columns = []
    for e in q_basis:
        pi = solve_discrete_lyapunov(a, e)
        blocks = []
        a_k = np.eye(n)
        for _ in range(lags + 1):
            blocks.append((c @ a_k @ pi @ c.T).ravel())
            a_k = a @ a_k
        columns.append(np.concatenate(blocks))
    zero_tail = np.zeros(p * p * lags)
    for e in r_basis:
        columns.append(np.concatenate([e.ravel(), zero_tail]))
    design = np.stack(columns, axis=1)
    target = np.concatenate([lam[k].ravel() for k in range(lags + 1)])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    nq = len(q_basis)
    q = sum(w * e for w, e in zip(coef[:nq], q_basis))
    r = sum(w * e for w, e in zip(coef[nq:], r_basis))
    return numerics.clip_to_spd(q, 1e-10), numerics.clip_to_spd(r, 1e-10)


# --- identification ------------------------------------------------------------

def identify(log: TrainingLog, horizon: int = 20,
             strategy: OrderStrategy = MaxGapRatio(),
             holdout_fraction: float = 0.2,
             whiteness_lags: int = 20,
             warmup: int = 200) -> IdentificationResult:
    """Fit a StateSpaceModel (standardized coordinates) from an attack-free log.

    The last ``holdout_fraction`` of the log is excluded from estimation and
    used for the per-channel variance-accounted-for score. Raises
    DegenerateSpectrum when the past explains essentially none of the future
    (nothing identifiable), UnstableModel when the estimated dynamics stay
    unstable after the one-shot shrink fallback.
    """
    if horizon < 2:
        raise InvalidArgument("horizon must be at least 2")
    t_total = log.T
    m, p = log.U.shape[1], log.Y.shape[1]
    needed = 2 * horizon * (m + p) + horizon
    if t_total < needed:
        raise InsufficientData(needed, t_total)

    split = t_total - int(holdout_fraction * t_total)
    u_est, y_est = log.U[:split], log.Y[:split]

    u_mean = u_est.mean(axis=0) if m else np.zeros(0)
    u_scale = u_est.std(axis=0) if m else np.zeros(0)
    if m:
        u_scale = np.where(u_scale < 1e-12, 1.0, u_scale)
    y_mean = y_est.mean(axis=0)
    y_scale = y_est.std(axis=0)
    y_scale = np.where(y_scale < 1e-12, 1.0, y_scale)
    scaling = Scaling(u_mean, u_scale, y_mean, y_scale)

    un = scaling.standardize_u(log.U) if m else log.U
    yn = scaling.standardize_y(log.Y)
    un_est, yn_est = un[:split], yn[:split]

    y_past, y_future = build_hankel(yn_est, horizon)
    if m:
        u_past, u_future = build_hankel(un_est, horizon)
        w_past = np.vstack([u_past, y_past])
    else:
        u_future = np.empty((0, y_past.shape[1]))
        w_past = y_past
    projection = _oblique_projection(y_future, w_past, u_future)

    # reject logs where the past has no predictive power (chance-level energy)
    j = projection.shape[1]
    pred_energy = float(np.sum(projection**2))
    fut_energy = float(np.sum(y_future**2))
    chance = w_past.shape[0] / j
    if fut_energy <= 0 or pred_energy / fut_energy <= 3.0 * chance:
        raise DegenerateSpectrum("future outputs are not predictable from the past")

    u_svd, s, _ = np.linalg.svd(projection, full_matrices=False)
    max_order = min(DEFAULT_MAX_ORDER, horizon * p - 1, s.size)
    selection = select_order(s[:max_order], strategy)
    order = selection.order

    gamma = u_svd[:, :order] * np.sqrt(s[:order])
    c_mat = gamma[:p].copy()
    a_mat, *_ = np.linalg.lstsq(gamma[:-p], gamma[p:], rcond=None)

    radius = numerics.spectral_radius_estimate(a_mat)
    if radius >= 1.0:
        a_mat = a_mat * (0.999 / radius)
        radius = numerics.spectral_radius_estimate(a_mat)
        if radius >= 1.0:
            raise UnstableModel(radius)

    b_mat, x0 = _estimate_b_x0(a_mat, c_mat, un_est, yn_est)

    # deterministic response over the full log; tail gives the fit score
    y_det = _simulate_deterministic(a_mat, b_mat, c_mat, x0, un)
    resid_var = np.var(yn[split:] - y_det[split:], axis=0)
    total_var = np.var(yn[split:], axis=0)
    fit = 1.0 - resid_var / np.where(total_var < 1e-300, 1.0, total_var)

    y_stoch = (yn_est - y_det[:split])[min(500, split // 10):]
    q_mat, r_mat = _estimate_qr(a_mat, c_mat, y_stoch, lags=min(2 * horizon, 40))

    model = StateSpaceModel(a_mat, b_mat, c_mat, q_mat, r_mat)
    try:
        filt = kalman.build_filter(model)
    except Exception as exc:
        raise NumericalFailure(f"steady-state filter construction failed: {exc}") from exc

    diagnostics = None
    innovations = _innovation_run(model, filt.K, un, yn)
    usable = innovations[warmup:]
    if usable.shape[0] >= 5 * whiteness_lags:
        diagnostics = ljung_box(usable, whiteness_lags)

    return IdentificationResult(
        model=model,
        filter=filt,
        scaling=scaling,
        order=order,
        horizon=horizon,
        hankel_singular_values=s,
        fit_score=fit,
        residual_diagnostics=diagnostics,
        low_confidence=selection.low_confidence,
        x0=x0,
    )


def _simulate_deterministic(a, b, c, x0, u) -> np.ndarray:
    from ._kernels import get_backend  # local import to keep module load light

    t_len = u.shape[0]
    p = c.shape[0]
    out = np.zeros((t_len, p))
    x = np.array(x0, dtype=np.float64)
    if b.shape[1] == 0:
        for t in range(t_len):
            out[t] = c @ x
            x = a @ x
        return out
    get_backend().__class__  # no kernel for this path; plain loop below
    for t in range(t_len):
        out[t] = c @ x
        x = a @ x + b @ u[t]
    return out


def _innovation_run(model: StateSpaceModel, gain: np.ndarray, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    t_len = y.shape[0]
    innov = np.zeros((t_len, model.p))
    x = np.zeros(model.n)
    u_prev = np.zeros(model.m)
    a, b, c = model.A, model.B, model.C
    has_u = model.m > 0
    for t in range(t_len):
        x_pred = a @ x + (b @ u_prev if has_u else 0.0)
        r = y[t] - c @ x_pred
        innov[t] = r
        x = x_pred + gain @ r
        if has_u:
            u_prev = u[t]
    return innov


# --- whiteness diagnostics -------------------------------------------------------

def ljung_box(residuals: np.ndarray, max_lag: int = 20) -> LjungBoxReport:
    """Per-channel portmanteau test of serial correlation at lags 1..max_lag.

    Q(L) = T (T+2) sum_{k<=L} rho_k^2 / (T-k), compared against a chi-squared
    distribution with L degrees of freedom.
    """
    res = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if res.shape[0] == 1 and res.shape[1] > 1:
        res = res.T
    t_len, p = res.shape
    if max_lag < 1:
        raise InvalidArgument("max_lag must be >= 1")
    if t_len < 5 * max_lag:
        raise InsufficientData(5 * max_lag, t_len)
    lags = np.arange(1, max_lag + 1)
    stats = np.zeros((max_lag, p))
    centered = res - res.mean(axis=0)
    denom = np.sum(centered**2, axis=0)
    if np.any(denom <= 0):
        bad = int(np.argmax(denom <= 0))
        raise InsufficientData(2, 1, what=f"distinct values in channel {bad}")
    for ch in range(p):
        x = centered[:, ch]
        rho_sq = np.array([
            (x[k:] @ x[:-k] / denom[ch]) ** 2 for k in lags
        ])
        stats[:, ch] = t_len * (t_len + 2) * np.cumsum(rho_sq / (t_len - lags))
    p_values = chi2.sf(stats, lags[:, None])
    return LjungBoxReport(lags=lags, statistic=stats, p_value=p_values)
