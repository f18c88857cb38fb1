"""
Domain models for DEPCAG systems: time grids, matrix fields, nonlinear terms,
linear/block systems, dichotomy data and numerical settings
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np


# Errors

class DepcagError(Exception):
    """Base class for every library error."""


class ConfigError(DepcagError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConditionViolation(DepcagError):
    """A named hypothesis (A1, frakB2, eq10a, ...) does not hold."""

    def __init__(self, condition: str, detail: str = ""):
        message = f"{condition} violated"
        if detail:
            message = f"{message} {detail}"
        super().__init__(message)
        self.condition = condition
        self.detail = detail


class HypothesisError(ConditionViolation):
    """A theorem inequality failed before a construction was attempted."""


class SingularFactorError(DepcagError):
    def __init__(self, interval: int, det: float):
        super().__init__(f"singular interval factor at interval {interval} (|det|={abs(det):.3e})")
        self.interval = interval
        self.det = det


class ConvergenceError(DepcagError):
    def __init__(self, message: str, interval: Optional[int] = None):
        super().__init__(message)
        self.interval = interval


class WindowError(DepcagError):
    """A horizon, bracket or query time leaves the working window."""


class NonFiniteError(DepcagError):
    pass


SINGULAR_DET = 1e-12


def opnorm(a: np.ndarray) -> float:
    """Max row-sum operator norm (the norm used for every constant)."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return float(np.max(np.abs(a))) if a.size else 0.0
    return float(np.max(np.sum(np.abs(a), axis=-1))) if a.size else 0.0


def vnorm(v: np.ndarray) -> float:
    """Vector norm compatible with opnorm (max norm)."""
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """
    Knots t_0 < ... < t_N over the working window [t_0, t_N], one anchor
    zeta_i per interval [t_i, t_{i+1}) and the length bound theta.
    """
    knots: np.ndarray
    anchors: np.ndarray
    theta: float

    def __post_init__(self):
        knots = _frozen_array(self.knots)
        anchors = _frozen_array(self.anchors)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "theta", float(self.theta))

        if knots.ndim != 1 or knots.size < 2 or not np.all(np.isfinite(knots)):
            raise ConditionViolation("A2", "- the window needs at least one finite interval")
        if anchors.shape != (knots.size - 1,):
            raise ConditionViolation(
                "A3", f"- expected {knots.size - 1} anchors, got {anchors.size}"
            )
        for i in range(knots.size - 1):
            if not knots[i] < knots[i + 1]:
                raise ConditionViolation("A1", f"at interval {i} (t_i < t_i+1 fails)")
            if not knots[i] <= anchors[i] <= knots[i + 1]:
                raise ConditionViolation("A1", f"at interval {i}")
        if not self.theta > 0:
            raise ConditionViolation("A4", "- theta must be positive")
        lengths = np.diff(knots)
        # small slack for knots produced by floating-point stepping
        too_long = np.nonzero(lengths > self.theta * (1 + 1e-12))[0]
        if too_long.size:
            raise ConditionViolation("A4", f"at interval {int(too_long[0])}")

    @classmethod
    def uniform(cls, step: float, window: Tuple[float, float], anchor_fraction: float = 0.0,
                theta: Optional[float] = None) -> "TimeGrid":
        t_min, t_max = float(window[0]), float(window[1])
        if not step > 0 or not t_max > t_min:
            raise ConditionViolation("A2", f"- bad uniform grid step={step} window={window}")
        count = int(math.floor((t_max - t_min) / step + 1e-9))
        knots = [t_min + k * step for k in range(count + 1)]
        if t_max - knots[-1] > 1e-9 * step:
            knots.append(t_max)
        else:
            knots[-1] = t_max
        knots = np.array(knots)
        anchors = knots[:-1] + anchor_fraction * np.diff(knots)
        if theta is None:
            theta = float(np.max(np.diff(knots)))
        return cls(knots, anchors, theta)

    @property
    def t_min(self) -> float:
        return float(self.knots[0])

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])

    @property
    def n_intervals(self) -> int:
        return int(self.knots.size - 1)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.knots)

    def contains(self, t: float, slack: float = 1e-12) -> bool:
        return self.t_min - slack <= t <= self.t_max + slack

    def interval_index(self, t: float) -> int:
        """Index i with t_i <= t < t_i+1; the right window end belongs to the last interval."""
        i = int(np.searchsorted(self.knots, t, side="right")) - 1
        return min(max(i, 0), self.n_intervals - 1)

    def interval_indices(self, ts: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.knots, np.asarray(ts, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_intervals - 1)

    def gamma(self, t):
        """The piecewise constant argument: gamma(t) = zeta_i on [t_i, t_i+1)."""
        if np.ndim(t) == 0:
            return float(self.anchors[self.interval_index(float(t))])
        return self.anchors[self.interval_indices(t)]

    def interval(self, i: int) -> Tuple[float, float]:
        return float(self.knots[i]), float(self.knots[i + 1])

    def substep(self, i: int, ode_step: float) -> float:
        a, b = self.interval(i)
        return min(ode_step, (b - a) / 8.0)

    def knots_between(self, a: float, b: float) -> np.ndarray:
        lo, hi = min(a, b), max(a, b)
        return self.knots[(self.knots > lo) & (self.knots < hi)]

    def __repr__(self):
        return f"<TimeGrid(intervals={self.n_intervals}, window=[{self.t_min}, {self.t_max}], theta={self.theta})>"


@dataclass(frozen=True, eq=False)
class MatrixField:
    """
    Matrix-valued function of time. `fn` maps an array of k times to a
    (k, n, n) array; constant fields keep their matrix in `constant`.
    """
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    constant: Optional[np.ndarray] = None
    source: Optional[Tuple[Tuple[str, ...], ...]] = None

    @classmethod
    def from_matrix(cls, matrix, source=None) -> "MatrixField":
        m = _frozen_array(np.atleast_2d(np.asarray(matrix, dtype=float)))
        if m.shape[0] != m.shape[1]:
            raise ConfigError(f"matrix must be square, got shape {m.shape}")

        def fn(ts):
            return np.broadcast_to(m, (np.size(ts),) + m.shape)
        return cls(m.shape[0], fn, m, source)

    @classmethod
    def zeros(cls, n: int) -> "MatrixField":
        return cls.from_matrix(np.zeros((n, n)))

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    @property
    def is_zero(self) -> bool:
        return self.constant is not None and not np.any(self.constant)

    def at(self, t: float) -> np.ndarray:
        if self.constant is not None:
            return self.constant
        out = self.fn(np.array([float(t)]))[0]
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite matrix entry at t={t}")
        return out

    def many(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.asarray(self.fn(ts), dtype=float)
        if self.constant is None and not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite matrix entry on sample times")
        return out

    @staticmethod
    def block_diag(a: "MatrixField", b: "MatrixField") -> "MatrixField":
        n1, n2 = a.dim, b.dim
        if a.is_constant and b.is_constant:
            m = np.zeros((n1 + n2, n1 + n2))
            m[:n1, :n1] = a.constant
            m[n1:, n1:] = b.constant
            return MatrixField.from_matrix(m)

        def fn(ts):
            ts = np.atleast_1d(ts)
            out = np.zeros((ts.size, n1 + n2, n1 + n2))
            out[:, :n1, :n1] = a.many(ts)
            out[:, n1:, n1:] = b.many(ts)
            return out
        return MatrixField(n1 + n2, fn)


@dataclass(frozen=True, eq=False)
class NonlinearTerm:
    """
    h(t, z, w) with w standing for z(gamma(t)). `fn` is vectorized: it takes
    times (k,), states (k, n) and frozen states (k, n) and returns (k, m).
    Bound metadata: |h| <= r(|z|+|w|) + mu and the Lipschitz constant l.
    """
    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dim_in: Tuple[int, int]
    dim_out: int
    growth_r: float = 0.0
    offset_mu: float = 0.0
    lipschitz_l: float = 0.0
    source: Optional[Tuple[str, ...]] = None
    symbol: str = "z"
    uses_frozen: bool = True

    def __post_init__(self):
        for name in ("growth_r", "offset_mu", "lipschitz_l"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def __call__(self, t: float, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = self.fn(np.array([float(t)]), np.asarray(z, dtype=float)[None, :],
                      np.asarray(w, dtype=float)[None, :])[0]
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite nonlinear term at t={t}")
        return out

    def many(self, ts, zs, ws) -> np.ndarray:
        out = self.fn(np.asarray(ts, dtype=float), np.asarray(zs, dtype=float),
                      np.asarray(ws, dtype=float))
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite nonlinear term on sample points")
        return out

    def with_bounds(self, r: float, mu: float, l: float) -> "NonlinearTerm":
        return replace(self, growth_r=r, offset_mu=mu, lipschitz_l=l)


def zero_term(n_in: int, n_out: int, symbol: str = "z") -> NonlinearTerm:
    def fn(ts, zs, ws):
        return np.zeros((np.size(ts), n_out))
    return NonlinearTerm(fn, (n_in, n_in), n_out, source=("0",) * n_out, symbol=symbol, uses_frozen=False)


def stack_block_terms(n1: int, n2: int, f: NonlinearTerm, g: NonlinearTerm,
                      p: Optional[NonlinearTerm], q: Optional[NonlinearTerm],
                      lam: float, delta: float, omega: float) -> NonlinearTerm:
    """(f(x)+p(y), g(x)+q(y)) as one term of the stacked state z=(x, y)."""

    def fn(ts, zs, ws):
        x, y = zs[:, :n1], zs[:, n1:]
        xw, yw = ws[:, :n1], ws[:, n1:]
        top = f.fn(ts, x, xw)
        bottom = g.fn(ts, x, xw)
        if p is not None:
            top = top + p.fn(ts, y, yw)
        if q is not None:
            bottom = bottom + q.fn(ts, y, yw)
        return np.concatenate([top, bottom], axis=1)

    has_pq = p is not None or q is not None
    uses_frozen = f.uses_frozen or g.uses_frozen or (p is not None and p.uses_frozen) \
        or (q is not None and q.uses_frozen)
    return NonlinearTerm(
        fn, (n1 + n2, n1 + n2), n1 + n2,
        growth_r=lam, offset_mu=delta if has_pq else 0.0,
        lipschitz_l=2.0 * omega, uses_frozen=uses_frozen,
    )


@dataclass(frozen=True, eq=False)
class DepcagSystem:
    """z' = M(t) z + M0(t) z(gamma(t)) + h(t, z, z(gamma(t)))"""
    grid: TimeGrid
    M: MatrixField
    M0: MatrixField
    h: Optional[NonlinearTerm] = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.M.dim != self.M0.dim:
            raise ConfigError(f"M is {self.M.dim}x{self.M.dim} but M0 is {self.M0.dim}x{self.M0.dim}")
        if self.h is not None and self.h.dim_out != self.M.dim:
            raise ConfigError(f"h has {self.h.dim_out} components, expected {self.M.dim}")

    @property
    def dim(self) -> int:
        return self.M.dim

    @property
    def is_linear(self) -> bool:
        return self.h is None

    def linear_part(self) -> "DepcagSystem":
        return replace(self, h=None)

    def with_term(self, h: Optional[NonlinearTerm]) -> "DepcagSystem":
        return replace(self, h=h)

    def __repr__(self):
        kind = "linear" if self.is_linear else "nonlinear"
        return f"<DepcagSystem(n={self.dim}, {kind}, {self.grid!r})>"


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """
    x' = A x + A0 x(gamma) + f(t, x, x(gamma)) + phi(t, y, y(gamma))
    y' = B y + B0 y(gamma) + g(t, x, x(gamma)) + psi(t, y, y(gamma))
    """
    grid: TimeGrid
    A: MatrixField
    A0: MatrixField
    B: MatrixField
    B0: MatrixField
    f: NonlinearTerm
    g: NonlinearTerm
    phi: NonlinearTerm
    psi: NonlinearTerm
    lam: float
    delta: float
    omega: float
    beta: float
    beta0: float
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.A.dim != self.A0.dim or self.B.dim != self.B0.dim:
            raise ConfigError("block matrices have inconsistent dimensions")
        for name in ("lam", "delta", "omega", "beta", "beta0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def n1(self) -> int:
        return self.A.dim

    @property
    def n2(self) -> int:
        return self.B.dim

    @property
    def dim(self) -> int:
        return self.n1 + self.n2

    def default_projection(self) -> np.ndarray:
        p = np.zeros((self.dim, self.dim))
        p[:self.n1, :self.n1] = np.eye(self.n1)
        return p

    def x_subsystem(self) -> DepcagSystem:
        """x' = A x + A0 x(gamma) + f: the x-equation of the intermediate system."""
        return DepcagSystem(self.grid, self.A, self.A0, self.f, self.constants)

    def x_linear(self) -> DepcagSystem:
        return DepcagSystem(self.grid, self.A, self.A0, None, self.constants)

    def y_linear(self) -> DepcagSystem:
        return DepcagSystem(self.grid, self.B, self.B0, None, self.constants)

    def stacked_linear(self) -> DepcagSystem:
        """The decoupled linear system z' = W z + W0 z(gamma)."""
        return DepcagSystem(
            self.grid, MatrixField.block_diag(self.A, self.B),
            MatrixField.block_diag(self.A0, self.B0), None, self.constants,
        )

    def full_system(self) -> DepcagSystem:
        """The nonlinear system with all four terms f, g, phi, psi."""
        h = stack_block_terms(self.n1, self.n2, self.f, self.g, self.phi, self.psi,
                              self.lam, self.delta, self.omega)
        return self.stacked_linear().with_term(h)

    def intermediate_system(self) -> DepcagSystem:
        """The system with phi = psi = 0 (x decoupled from y)."""
        h = stack_block_terms(self.n1, self.n2, self.f, self.g, None, None,
                              self.lam, self.delta, self.omega)
        return self.stacked_linear().with_term(h)

    def terms(self):
        return {"f": self.f, "g": self.g, "phi": self.phi, "psi": self.psi}

    def __repr__(self):
        return f"<BlockSystem(n1={self.n1}, n2={self.n2}, lambda={self.lam}, delta={self.delta}, omega={self.omega})>"


@dataclass(frozen=True, eq=False)
class DichotomySpec:
    projection: np.ndarray
    bigK: float
    alpha: float

    def __post_init__(self):
        p = _frozen_array(np.atleast_2d(self.projection))
        object.__setattr__(self, "projection", p)
        if p.shape[0] != p.shape[1]:
            raise ConditionViolation("D", f"- projection must be square, got {p.shape}")
        if opnorm(p @ p - p) > 1e-12 * max(1.0, opnorm(p)):
            raise ConditionViolation("D", "- projection is not idempotent")
        if not self.bigK >= 1:
            raise ConditionViolation("D", f"- K must be >= 1, got {self.bigK}")
        if not self.alpha > 0:
            raise ConditionViolation("D", f"- alpha must be > 0, got {self.alpha}")

    @property
    def complement(self) -> np.ndarray:
        return np.eye(self.projection.shape[0]) - self.projection


@dataclass(frozen=True)
class NumericsConfig:
    ode_step: float = 0.01
    fp_tol: float = 1e-12
    picard_tol: float = 1e-8
    tail_tol: float = 1e-8
    crossing_tol: float = 1e-10
    max_iters: int = 200
    samples: int = 40
    spot_samples: int = 256
    spot_radius: float = 10.0
    stage_tol: float = 1e-4
    composed_tol: float = 1e-3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for name in ("ode_step", "fp_tol", "picard_tol", "tail_tol", "crossing_tol",
                     "spot_radius", "stage_tol", "composed_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", f"numerics.{name}")
        for name in ("max_iters", "samples", "spot_samples", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", f"numerics.{name}")

    def with_overrides(self, **kwargs) -> "NumericsConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True, eq=False)
class LoadedConfig:
    """Everything a config file describes."""
    system: object  # DepcagSystem or BlockSystem
    dichotomy: DichotomySpec
    numerics: NumericsConfig
    raw: dict = field(default_factory=dict)

    @property
    def is_block(self) -> bool:
        return isinstance(self.system, BlockSystem)
