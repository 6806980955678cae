"""Plant and filter representations plus the ``.itdt-model`` file format.

The model file is plain UTF-8 text so it can be diffed and audited. Layout:

    itdt-model v1
    key = value            # provenance and detector parameters
    dims = n m p
    matrix A n n
    <n rows of n floats, 17 significant digits, space separated>
    matrix B n m
    ...
    end

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly, so ``parse(serialize(f))`` reproduces every matrix entry
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DimensionMismatch, ParseError, VersionMismatch

FORMAT_VERSION = "v1"
MODEL_FILE_EXTENSION = ".itdt-model"

# Validation codes returned by validate().
UNSTABLE_A = "UnstableA"
BORDERLINE_STABILITY = "BorderlineStability"
DIMENSION_MISMATCH = "DimensionMismatch"
NON_FINITE = "NonFinite"
Q_NOT_SPD = "QNotPositiveDefinite"
R_NOT_SPD = "RNotPositiveDefinite"

STABILITY_ITERATIONS = 200
BORDERLINE_RADIUS = 0.999


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time linear plant x' = A x + B u + w, y = C x + v.

    w ~ N(0, Q) and v ~ N(0, R). ``m`` may be zero (no measured inputs).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise DimensionMismatch(f"{name} must be 2-D, got ndim {arr.ndim}")
            object.__setattr__(self, name, arr)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise DimensionMismatch(f"C must have {n} columns, got {self.C.shape}")
        if self.Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be {n}x{n}, got {self.Q.shape}")
        p = self.C.shape[0]
        if self.R.shape != (p, p):
            raise DimensionMismatch(f"R must be {p}x{p}, got {self.R.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


def validate(model: StateSpaceModel) -> list[tuple[str, str]]:
    """Check model invariants; returns (code, detail) pairs, empty when valid.

    Violations are data, not exceptions: callers decide whether a borderline
    spectral radius (common for near-integrating processes) is acceptable.
    """
    violations: list[tuple[str, str]] = []
    for name in ("A", "B", "C", "Q", "R"):
        arr = getattr(model, name)
        if not np.all(np.isfinite(arr)):
            violations.append((NON_FINITE, f"{name} contains NaN or Inf"))
    if violations:
        return violations

    radius = numerics.spectral_radius_estimate(model.A, STABILITY_ITERATIONS)
    if radius >= 1.0:
        violations.append((UNSTABLE_A, f"spectral radius {radius:.6g} >= 1"))
    elif radius >= BORDERLINE_RADIUS:
        violations.append((BORDERLINE_STABILITY, f"spectral radius {radius:.6g} in [0.999, 1)"))

    for name, code in (("Q", Q_NOT_SPD), ("R", R_NOT_SPD)):
        if not numerics.is_spd(getattr(model, name)):
            violations.append((code, f"{name} is not symmetric positive definite"))
    return violations


@dataclass(frozen=True)
class SteadyStateFilter:
    """Constant-gain state estimator derived from a plant model.

    ``P`` is the steady a-priori error covariance, ``K`` the gain, ``Sigma``
    the innovation covariance. ``sigma_inv`` and ``log_det_sigma`` are cached
    because the detector consumes them every step.
    """

    model: StateSpaceModel
    P: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray
    sigma_inv: np.ndarray = field(repr=False)
    log_det_sigma: float = 0.0

    @classmethod
    def from_matrices(cls, model: StateSpaceModel, P, K, Sigma) -> "SteadyStateFilter":
        P = np.ascontiguousarray(P, dtype=np.float64)
        K = np.ascontiguousarray(K, dtype=np.float64)
        Sigma = np.ascontiguousarray(Sigma, dtype=np.float64)
        return cls(
            model=model,
            P=P,
            K=K,
            Sigma=Sigma,
            sigma_inv=numerics.inv_spd(Sigma, "Sigma"),
            log_det_sigma=numerics.log_det_spd(Sigma, "Sigma"),
        )


@dataclass
class Scaling:
    """Per-channel affine standardization applied before filtering."""

    u_mean: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def identity(cls, m: int, p: int) -> "Scaling":
        return cls(np.zeros(m), np.ones(m), np.zeros(p), np.ones(p))

    def standardize_u(self, u: np.ndarray) -> np.ndarray:
        return (u - self.u_mean) / self.u_scale

    def standardize_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_scale


@dataclass
class ModelFile:
    """Everything a deployment needs: filter, scaling, detector parameters.

    ``sigma_ref`` is the reference innovation covariance used for scoring
    (empirical by default, written by calibration); ``tau`` is absent until
    calibration has run.
    """

    filter: SteadyStateFilter
    scaling: Scaling
    provenance: dict[str, str] = field(default_factory=dict)
    window: int = 60
    epsilon: float = 1e-4
    warmup: int = 200
    sigma_ref: np.ndarray | None = None
    tau: float | None = None
    alpha: float | None = None
    calibration_m: int | None = None
    tau_ci_low: float | None = None
    tau_ci_high: float | None = None


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_matrix(lines: list[str], name: str, mat: np.ndarray) -> None:
    rows, cols = mat.shape
    lines.append(f"matrix {name} {rows} {cols}")
    for r in range(rows):
        lines.append(" ".join(_fmt(v) for v in mat[r]))


def serialize(mf: ModelFile) -> str:
    """Render a ModelFile as model-file text."""
    f = mf.filter
    model = f.model
    lines = [f"itdt-model {FORMAT_VERSION}"]
    for key, value in mf.provenance.items():
        lines.append(f"{key} = {value}")
    lines.append(f"window = {mf.window}")
    lines.append(f"epsilon = {_fmt(mf.epsilon)}")
    lines.append(f"warmup = {mf.warmup}")
    if mf.tau is not None:
        lines.append(f"tau = {_fmt(mf.tau)}")
        lines.append(f"alpha = {_fmt(mf.alpha)}")
        lines.append(f"calibration_m = {mf.calibration_m}")
    if mf.tau_ci_low is not None:
        lines.append(f"tau_ci_low = {_fmt(mf.tau_ci_low)}")
        lines.append(f"tau_ci_high = {_fmt(mf.tau_ci_high)}")
    lines.append(f"dims = {model.n} {model.m} {model.p}")
    for vec_name, vec in (
        ("u_mean", mf.scaling.u_mean),
        ("u_scale", mf.scaling.u_scale),
        ("y_mean", mf.scaling.y_mean),
        ("y_scale", mf.scaling.y_scale),
    ):
        lines.append(f"vector {vec_name} {len(vec)}")
        lines.append(" ".join(_fmt(v) for v in vec) if len(vec) else "")
    for name, mat in (
        ("A", model.A),
        ("B", model.B),
        ("C", model.C),
        ("Q", model.Q),
        ("R", model.R),
        ("P", f.P),
        ("K", f.K),
        ("Sigma", f.Sigma),
    ):
        _write_matrix(lines, name, mat)
    if mf.sigma_ref is not None:
        _write_matrix(lines, "SigmaRef", mf.sigma_ref)
    lines.append("end")
    return "\n".join(lines) + "\n"


_KNOWN_KEYS = {"window", "epsilon", "warmup", "tau", "alpha", "calibration_m",
               "tau_ci_low", "tau_ci_high", "dims"}


def parse(text: str | bytes) -> ModelFile:
    """Parse model-file text back into a ModelFile.

    Raises VersionMismatch for unknown versions and ParseError (with the
    offending line number) for anything malformed or truncated.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "itdt-model":
        raise ParseError(1, f"expected 'itdt-model {FORMAT_VERSION}' header")
    if head[1] != FORMAT_VERSION:
        raise VersionMismatch(head[1], FORMAT_VERSION)

    scalars: dict[str, str] = {}
    provenance: dict[str, str] = {}
    vectors: dict[str, np.ndarray] = {}
    matrices: dict[str, np.ndarray] = {}
    dims: tuple[int, int, int] | None = None
    ended = False

    idx = 1
    total = len(lines)
    while idx < total:
        raw = lines[idx]
        lineno = idx + 1
        idx += 1
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped == "end":
            ended = True
            break
        if stripped.startswith("matrix ") or stripped.startswith("vector "):
            parts = stripped.split()
            kind = parts[0]
            if kind == "matrix":
                if len(parts) != 4:
                    raise ParseError(lineno, "matrix header must be 'matrix NAME ROWS COLS'")
                name, rows_s, cols_s = parts[1], parts[2], parts[3]
            else:
                if len(parts) != 3:
                    raise ParseError(lineno, "vector header must be 'vector NAME LENGTH'")
                name, rows_s, cols_s = parts[1], "1", parts[2]
            try:
                rows, cols = int(rows_s), int(cols_s)
            except ValueError:
                raise ParseError(lineno, "non-integer dimension in header") from None
            data = np.zeros((rows, cols))
            for r in range(rows):
                if idx >= total:
                    raise ParseError(total, f"truncated while reading {kind} {name}")
                row_line = lines[idx]
                row_no = idx + 1
                idx += 1
                fields = row_line.split()
                if cols == 0:
                    if fields:
                        raise ParseError(row_no, f"expected empty row for zero-width {name}")
                    continue
                if len(fields) != cols:
                    raise ParseError(row_no, f"expected {cols} values in row of {name}, got {len(fields)}")
                try:
                    data[r] = [float(v) for v in fields]
                except ValueError:
                    raise ParseError(row_no, f"non-numeric value in {name}") from None
            if kind == "matrix":
                matrices[name] = data
            else:
                vectors[name] = data.ravel()
            continue
        if "=" in stripped:
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "dims":
                parts = value.split()
                if len(parts) != 3:
                    raise ParseError(lineno, "dims must be 'n m p'")
                try:
                    dims = tuple(int(v) for v in parts)  # type: ignore[assignment]
                except ValueError:
                    raise ParseError(lineno, "dims must be integers") from None
            elif key in _KNOWN_KEYS:
                scalars[key] = value
            else:
                provenance[key] = value
            continue
        raise ParseError(lineno, f"unrecognized line: {stripped[:40]!r}")

    if not ended:
        raise ParseError(total, "missing 'end' marker (file truncated?)")
    if dims is None:
        raise ParseError(total, "missing dims")
    required = ("A", "B", "C", "Q", "R", "P", "K", "Sigma")
    for name in required:
        if name not in matrices:
            raise ParseError(total, f"missing matrix {name}")
    n, m, p = dims
    shapes = {"A": (n, n), "B": (n, m), "C": (p, n), "Q": (n, n),
              "R": (p, p), "P": (n, n), "K": (n, p), "Sigma": (p, p)}
    for name, shape in shapes.items():
        if matrices[name].shape != shape:
            raise ParseError(total, f"matrix {name} has shape {matrices[name].shape}, expected {shape}")

    model = StateSpaceModel(matrices["A"], matrices["B"], matrices["C"],
                            matrices["Q"], matrices["R"])
    filt = SteadyStateFilter.from_matrices(model, matrices["P"], matrices["K"], matrices["Sigma"])
    try:
        scaling = Scaling(vectors["u_mean"], vectors["u_scale"],
                          vectors["y_mean"], vectors["y_scale"])
    except KeyError as exc:
        raise ParseError(total, f"missing vector {exc.args[0]}") from None

    def opt_float(key):
        return float(scalars[key]) if key in scalars else None

    return ModelFile(
        filter=filt,
        scaling=scaling,
        provenance=provenance,
        window=int(scalars.get("window", 60)),
        epsilon=float(scalars.get("epsilon", 1e-4)),
        warmup=int(scalars.get("warmup", 200)),
        sigma_ref=matrices.get("SigmaRef"),
        tau=opt_float("tau"),
        alpha=opt_float("alpha"),
        calibration_m=int(scalars["calibration_m"]) if "calibration_m" in scalars else None,
        tau_ci_low=opt_float("tau_ci_low"),
        tau_ci_high=opt_float("tau_ci_high"),
    )
