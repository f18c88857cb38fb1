"""
Topological conjugacy between a nonlinear block DEPCAG and its linear part.

Two stages are composed:
  * stage 6: H = (H1, H2) sends solutions of the intermediate system
    (phi = psi = 0) to solutions of the linear system; L is its inverse.
    H1 runs the nonlinear x-flow to the unit sphere and returns along the
    linear flow; H2 removes the forward-bounded response of y to g.
  * stage 7: H~ sends solutions of the full system to the intermediate one
    by adding the bounded solution chi of a shifted system; L~ goes back.
"""

import math
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from models import (
    BlockSystem, DepcagError, DepcagSystem, DichotomySpec, NonlinearTerm, NumericsConfig,
    WindowError, vnorm,
)
from solve import Trajectory, bounded_solution, snap_span, solve_forced, solve_ivp, solve_span, tail_horizon
from transition import BlockTransition, TransitionOperator
from verify import HypothesisReport, check_shifted_theorem1, check_theorem2, growth_constants, parallel_map

logger = logging.getLogger("depcag")

TOWARD_LINEAR = "toward-linear"
TOWARD_NONLINEAR = "toward-nonlinear"
STAGES = ("6", "7", "all")
# flow times, relative to t0, at which crossing-time invariance is checked
CROSSING_SHIFTS = (0.3, 1.7, -2.0, 3.5, -0.8)


@dataclass(frozen=True, eq=False)
class CrossingTime:
    """The time at which the flow through a nonzero state meets the unit sphere."""
    value: float
    bracket: Tuple[float, float]
    residual: float
    trajectory: Optional[Trajectory] = None


@dataclass(frozen=True, eq=False)
class ShiftedSystem:
    """
    chi' = W chi + W0 chi(gamma) + hbar with
    hbar(t, z, w) = h_target(t, zref + z, wref + w) - h_source(t, zref, wref),
    zref the source solution through the base point. Then zref + chi solves
    the target system.
    """
    source: DepcagSystem
    target: DepcagSystem
    reference: Trajectory
    lam: float
    delta: float
    omega: float

    @property
    def term(self) -> NonlinearTerm:
        grid = self.source.grid
        ref, h_source, h_target = self.reference, self.source.h, self.target.h

        def fn(ts, zs, ws):
            ts = np.atleast_1d(ts)
            zb = ref.many(ts)
            wb = ref.many(grid.gamma(ts))
            return h_target.fn(ts, zb + zs, wb + ws) - h_source.fn(ts, zb, wb)

        n = self.source.dim
        return NonlinearTerm(fn, (n, n), n, growth_r=2 * self.lam, offset_mu=4 * self.delta,
                             lipschitz_l=2 * self.omega)

    @property
    def system(self) -> DepcagSystem:
        return self.target.linear_part().with_term(self.term)


class Linearization:
    """
    Conjugacy machinery for one BlockSystem. Theorem-level hypotheses are
    checked on construction; the transition operators, the Omega grids of
    the shifted systems and the computed chi values are shared by every
    evaluation and safe to use from several threads.
    """

    def __init__(self, block: BlockSystem, d: DichotomySpec, numerics: Optional[NumericsConfig] = None):
        self.block = block
        self.d = d
        self.numerics = numerics or NumericsConfig()
        self.grid = block.grid
        self.n1, self.n2 = block.n1, block.n2

        self.report = check_theorem2(block, d, self.numerics)
        self.report.require("frakC", "eq11", "eq12", "eq13", "eq14")
        shifted = check_shifted_theorem1(block, d, self.numerics)
        self.report.merge(shifted)
        self.report.require("eq10a", "eq10b", "sigma")
        c = self.report.constants
        self.alpha0 = c["alpha0"]
        self.theta_bar = c["theta_bar_decay"]
        self.h2_factor = c["h2_bound_factor"]
        self.sigma_bar = c["sigma_bar"]

        self.x_system = block.x_subsystem()
        self.x_linear = block.x_linear()
        self.y_linear = block.y_linear()
        self.full = block.full_system()
        self.intermediate = block.intermediate_system()
        self.transitions = BlockTransition(TransitionOperator(self.x_linear, self.numerics),
                                           TransitionOperator(self.y_linear, self.numerics))
        self.w_op = TransitionOperator(block.stacked_linear(), self.numerics)
        self.w_growth = growth_constants(block.stacked_linear(), d, self.numerics)
        self._grids: Dict[tuple, object] = {}
        self._chi: Dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

        # |X| changes at most this fast on the unit sphere
        slope = 1 + block.beta + block.beta0 + 2 * block.lam
        self._xtol = self.numerics.crossing_tol / slope

    def split(self, z) -> Tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n1 + self.n2:
            raise DepcagError(f"state has {z.size} components, system dimension is {self.n1 + self.n2}")
        return z[:self.n1], z[self.n1:]

    # crossing times

    def _crossing(self, t0: float, x0: np.ndarray, solve: Callable[[float], Trajectory]) -> CrossingTime:
        size = vnorm(x0)
        if size == 0:
            raise DepcagError("crossing time is undefined at the origin")
        if size == 1:
            return CrossingTime(t0, (t0, t0), 0.0)
        direction = 1.0 if size > 1 else -1.0
        grid = self.grid
        length = grid.theta
        while True:
            end = min(max(t0 + direction * length, grid.t_min), grid.t_max)
            traj = solve(end)
            crossed = vnorm(traj(end)) <= 1 if direction > 0 else vnorm(traj(end)) >= 1
            if crossed:
                break
            if end in (grid.t_min, grid.t_max):
                raise WindowError(f"no unit-sphere crossing from t={t0} inside the working window")
            length *= 2
        lo, hi = sorted((t0, end))
        logger.debug(f"Crossing bracket [{lo}, {hi}] from t0={t0}, |x0|={size:.6g}")
        value = bisect(lambda s: vnorm(traj(s)) - 1.0, lo, hi, xtol=self._xtol)
        return CrossingTime(value, (lo, hi), abs(vnorm(traj(value)) - 1.0), traj)

    def crossing_time_T(self, t0: float, x0) -> CrossingTime:
        """T(t0, x0): |X(T, t0, x0)| = 1 along the nonlinear x-flow."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return self._crossing(t0, x0, lambda end: solve_ivp(self.x_system, t0, x0, end, self.numerics))

    def crossing_time_S(self, t0: float, xi) -> CrossingTime:
        """S(t0, xi): |Z1(S, t0) xi| = 1 along the linear x-flow."""
        xi = np.asarray(xi, dtype=float).reshape(-1)
        return self._crossing(t0, xi, lambda end: solve_ivp(self.x_linear, t0, xi, end, self.numerics))

    # stage 6

    def H1(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.any(x):
            return np.zeros(self.n1)
        crossing = self.crossing_time_T(t, x)
        on_sphere = crossing.trajectory(crossing.value) if crossing.trajectory is not None else x
        return self.transitions.x.transition_z(t, crossing.value) @ on_sphere

    def L1(self, t: float, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if not np.any(xi):
            return np.zeros(self.n1)
        crossing = self.crossing_time_S(t, xi)
        on_sphere = self.transitions.x.transition_z(crossing.value, t) @ xi
        return solve_ivp(self.x_system, crossing.value, on_sphere, t, self.numerics).final

    def h2_horizon(self, x) -> float:
        """T_h with h2_bound_factor |x| exp(-(alpha + alpha0) T_h) <= tail_tol."""
        amplitude = self.h2_factor * vnorm(x)
        if not math.isfinite(amplitude):
            raise WindowError("H2 tail bound is infinite; no finite horizon")
        if amplitude <= self.numerics.tail_tol:
            return 0.0
        return math.log(amplitude / self.numerics.tail_tol) / (self.d.alpha + self.alpha0)

    def forward_response(self, t: float, x) -> np.ndarray:
        """
        q(t) for the y-equation driven by g along X(., t, x), bounded forward:
        solved backward from q(t + T_h) = 0.
        """
        x = np.asarray(x, dtype=float)
        if not np.any(x):
            return np.zeros(self.n2)
        horizon = self.h2_horizon(x)
        if horizon == 0:
            return np.zeros(self.n2)
        grid = self.grid
        end = t + horizon
        if end > grid.t_max:
            raise WindowError(f"H2 horizon {horizon:.4g} from t={t} leaves the working window")
        lo = float(grid.knots[grid.interval_index(t)])
        hi = float(grid.knots[min(grid.interval_index(end) + 1, grid.n_intervals)])
        flow = solve_span(self.x_system, t, x, lo, hi, self.numerics)
        g = self.block.g

        def forcing(s):
            return g(s, flow(s), flow(grid.gamma(s)))

        return solve_forced(self.y_linear, forcing, end, np.zeros(self.n2), t, self.numerics).final

    def map_H(self, t: float, z) -> np.ndarray:
        """Intermediate system -> linear system."""
        x, y = self.split(z)
        return np.concatenate([self.H1(t, x), y - self.forward_response(t, x)])

    def map_L(self, t: float, z) -> np.ndarray:
        """Linear system -> intermediate system."""
        xi, eta = self.split(z)
        x = self.L1(t, xi)
        return np.concatenate([x, eta + self.forward_response(t, x)])

    # stage 7

    def chi(self, t: float, z, source: DepcagSystem, target: DepcagSystem, label: str) -> np.ndarray:
        """Bounded solution at t of the shifted system through (t, z)."""
        z = np.asarray(z, dtype=float).reshape(-1)
        key = (label, round(float(t), 12)) + tuple(np.round(z, 12))
        cached = self._chi.get(key)
        if cached is not None:
            return cached
        block, d, numerics = self.block, self.d, self.numerics
        if block.delta == 0 and block.lam == 0 and block.omega == 0:
            return np.zeros(z.size)
        horizon = tail_horizon(d.bigK, d.alpha, self.w_growth.rho_tilde, 2 * block.lam,
                               self.sigma_bar, 4 * block.delta, numerics.tail_tol)
        grid = self.grid
        reach = horizon + grid.theta
        if t - reach < grid.t_min or t + reach > grid.t_max:
            raise WindowError(f"shifted-system window [{t - reach:.4g}, {t + reach:.4g}] leaves the working window")
        k0, k1 = snap_span(grid, (t - reach, t + reach))
        a, b = float(grid.knots[k0]), float(grid.knots[k1])
        reference = solve_span(source, t, z, a, b, numerics)
        shifted = ShiftedSystem(source, target, reference, block.lam, block.delta, block.omega)
        solution = bounded_solution(shifted.system, d, numerics, span=(a, b), growth=self.w_growth,
                                    probe=False, op=self.w_op, grids=self._grids)
        value = solution(t)
        logger.debug(f"chi[{label}] at t={t}: {solution.iterations} sweeps, |chi|={vnorm(value):.3e}")
        with self._lock:
            return self._chi.setdefault(key, value)

    def map_Htilde(self, t: float, z) -> np.ndarray:
        """Full system -> intermediate system."""
        z = np.asarray(z, dtype=float).reshape(-1)
        return z + self.chi(t, z, self.full, self.intermediate, "Htilde")

    def map_Ltilde(self, t: float, z) -> np.ndarray:
        """Intermediate system -> full system."""
        z = np.asarray(z, dtype=float).reshape(-1)
        return z + self.chi(t, z, self.intermediate, self.full, "Ltilde")

    # composition

    def conjugacy_composed(self, t: float, z, direction: str = TOWARD_LINEAR) -> np.ndarray:
        if direction == TOWARD_LINEAR:
            return self.map_H(t, self.map_Htilde(t, z))
        if direction == TOWARD_NONLINEAR:
            return self.map_Ltilde(t, self.map_L(t, z))
        raise ValueError(f"unknown direction {direction!r}")

    def conjugacy_map(self, stage: str = "all", direction: str = TOWARD_LINEAR) -> "ConjugacyMap":
        return ConjugacyMap(self, direction, stage)

    def stage_systems(self, stage: str) -> Tuple[DepcagSystem, DepcagSystem]:
        """(nonlinear side, linear side) connected by a stage."""
        linear = self.block.stacked_linear()
        if stage == "6":
            return self.intermediate, linear
        if stage == "7":
            return self.full, self.intermediate
        return self.full, linear

    def decay_check(self, t0: float, x0, t1: float, samples: int = 40) -> HypothesisReport:
        """|X(t)| <= |x0| exp(-alpha0 (t - t0)) and its frozen-argument version on [t0, t1]."""
        x0 = np.asarray(x0, dtype=float)
        lo = min(float(self.grid.gamma(t0)), t0)
        hi = max(float(self.grid.gamma(t1)), t1)
        traj = solve_span(self.x_system, t0, x0, lo, hi, self.numerics)
        ts = np.linspace(t0, t1, samples)
        size = vnorm(x0)
        bound = size * np.exp(-self.alpha0 * (ts - t0))
        norms = np.max(np.abs(traj.many(ts)), axis=1)
        excess = float(np.max(norms - bound * (1 + 1e-9) - 1e-12))
        report = HypothesisReport(constants={"alpha0": self.alpha0})
        report.add("decay", "|X(t)| - |x0| exp(-alpha0 (t - t0)) <= 0", excess, 0.0, excess <= 0)
        if self.theta_bar < 1:
            frozen = np.max(np.abs(traj.many(self.grid.gamma(ts))), axis=1)
            bound2 = bound * math.exp(self.alpha0 * self.grid.theta) / (1 - self.theta_bar)
            excess2 = float(np.max(frozen - bound2 * (1 + 1e-9) - 1e-12))
            report.add("decay_frozen", "|X(gamma(t))| - (1-theta_bar)^-1 |x0| exp(-alpha0 (t - t0)) exp(alpha0 theta) <= 0",
                       excess2, 0.0, excess2 <= 0)
        else:
            report.add("decay_frozen", "theta_bar < 1", self.theta_bar, 1.0, True, note="not applicable")
        return report


@dataclass(frozen=True, eq=False)
class ConjugacyMap:
    """One stage (or the composition) in one direction, callable as map(t, z)."""
    engine: Linearization
    direction: str = TOWARD_LINEAR
    stage: str = "all"

    def __post_init__(self):
        if self.direction not in (TOWARD_LINEAR, TOWARD_NONLINEAR):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")

    def __call__(self, t: float, z) -> np.ndarray:
        e = self.engine
        linear = self.direction == TOWARD_LINEAR
        if self.stage == "6":
            return e.map_H(t, z) if linear else e.map_L(t, z)
        if self.stage == "7":
            return e.map_Htilde(t, z) if linear else e.map_Ltilde(t, z)
        return e.conjugacy_composed(t, z, self.direction)

    @property
    def inverse(self) -> "ConjugacyMap":
        flipped = TOWARD_NONLINEAR if self.direction == TOWARD_LINEAR else TOWARD_LINEAR
        return ConjugacyMap(self.engine, flipped, self.stage)

    def round_trip(self, t: float, z) -> float:
        z = np.asarray(z, dtype=float)
        return vnorm(self.inverse(t, self(t, z)) - z)


# Report

def state_grid(dim: int, n: int, radius: float = 3.0) -> List[np.ndarray]:
    """n points per axis on [-radius, radius]^dim."""
    axis = np.linspace(-radius, radius, n)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return [np.array(p) for p in np.stack([m.ravel() for m in mesh], axis=1)]


def _solution_values(system: DepcagSystem, t0: float, z0, times: Iterable[float],
                     numerics: NumericsConfig) -> np.ndarray:
    times = list(times)
    return solve_ivp(system, t0, z0, max(times), numerics).many(times)


def dynamics_defect(engine: Linearization, mapping: "ConjugacyMap", t0: float, z0: np.ndarray,
                     times: np.ndarray) -> float:
    """Worst |map(t, z(t)) - w(t)| where z solves the source and w the target system through map(t0, z0)."""
    source, target = engine.stage_systems(mapping.stage)
    if mapping.direction == TOWARD_NONLINEAR:
        source, target = target, source
    zs = _solution_values(source, t0, z0, times, engine.numerics)
    ws = _solution_values(target, t0, mapping(t0, z0), times, engine.numerics)
    return max(vnorm(mapping(t, z) - w) for t, z, w in zip(times, zs, ws))


def conjugacy_report(block: BlockSystem, d: DichotomySpec, numerics: Optional[NumericsConfig] = None,
                     grid_points: int = 5, t0: float = 0.0, radius: float = 3.0,
                     dynamics_span: float = 5.0, dynamics_states: int = 5) -> HypothesisReport:
    """
    Round-trip, dynamics, displacement, crossing and continuity defects of
    the conjugacy maps on a grid of states around t0.
    """
    numerics = numerics or NumericsConfig()
    engine = Linearization(block, d, numerics)
    report = HypothesisReport()
    report.merge(engine.report)
    states = state_grid(block.dim, grid_points, radius)
    threads = numerics.threads

    # round trips, stage by stage and composed
    for stage, tol in (("6", numerics.stage_tol), ("7", numerics.stage_tol), ("all", numerics.composed_tol)):
        forward = engine.conjugacy_map(stage, TOWARD_LINEAR)
        defects = parallel_map(lambda z: max(forward.round_trip(t0, z), forward.inverse.round_trip(t0, z)),
                               states, threads)
        worst = max(defects)
        report.add(f"roundtrip_{stage}", "max |inverse(map(z)) - z| <= tol", worst, tol, worst <= tol,
                   note=f"{len(states)} states, both directions")

    # solutions are mapped to solutions
    times = t0 + np.linspace(0.0, dynamics_span, 11)[1:]
    nonzero = [z for z in states if vnorm(z) > 0]
    picks = np.unique(np.linspace(0, len(nonzero) - 1, min(dynamics_states, len(nonzero))).round().astype(int))
    starts = [nonzero[i] for i in picks] if nonzero else []
    for stage, tol in (("6", numerics.stage_tol), ("7", numerics.stage_tol), ("all", numerics.composed_tol)):
        defects = []
        for direction in (TOWARD_LINEAR, TOWARD_NONLINEAR):
            mapping = engine.conjugacy_map(stage, direction)
            defects += parallel_map(lambda z: dynamics_defect(engine, mapping, t0, z, times), starts, threads)
        worst = max(defects) if defects else 0.0
        report.add(f"dynamics_{stage}", "max |map(t, z(t)) - w(t)| <= tol", worst, tol, worst <= tol,
                   note=f"{len(starts)} solutions per direction on [{t0}, {t0 + dynamics_span}]")

    # displacement from the identity
    worst_tilde = max(parallel_map(
        lambda z: max(vnorm(engine.map_Htilde(t0, z) - z), vnorm(engine.map_Ltilde(t0, z) - z)),
        states, threads))
    report.add("displacement_tilde", "|H~(t,z) - z|, |L~(t,z) - z| <= sigma_bar",
               worst_tilde, engine.sigma_bar, worst_tilde <= engine.sigma_bar * (1 + 1e-9))
    h2_excess = max(parallel_map(
        lambda z: vnorm(engine.forward_response(t0, z[:block.n1])) - engine.h2_factor * vnorm(z[:block.n1]),
        states, threads))
    report.add("displacement_H2", "|H2(t,x,y) - y| - h2_bound_factor |x| <= 0", h2_excess, 0.0, h2_excess <= 0)

    # crossing-time identities
    x0 = np.full(block.n1, 2.0)
    base = engine.crossing_time_T(t0, x0)
    shift = 0.0
    for t in (t0 + dt for dt in CROSSING_SHIFTS):
        xt = solve_ivp(engine.x_system, t0, x0, t, numerics).final
        shift = max(shift, abs(engine.crossing_time_T(t, xt).value - base.value))
    report.add("crossing_invariance", "|T(t, X(t,t0,x0)) - T(t0,x0)| <= 1e-6", shift, 1e-6, shift <= 1e-6)
    dual = abs(engine.crossing_time_S(t0, engine.H1(t0, x0)).value - base.value)
    report.add("crossing_duality", "|S(t0, H1(t0,x0)) - T(t0,x0)| <= 1e-5", dual, 1e-5, dual <= 1e-5)
    report.constants["crossing_T"] = base.value

    # H1 and L1 shrink to 0 with their argument
    e1 = np.zeros(block.n1)
    e1[0] = 1.0
    for name, fn in (("continuity_H1", engine.H1), ("continuity_L1", engine.L1)):
        sizes = [vnorm(fn(t0, 10.0 ** -k * e1)) for k in range(1, 7)]
        decreasing = all(b < a for a, b in zip(sizes, sizes[1:]))
        report.add(name, "|map(t0, 10^-k e1)| decreasing for k = 1..6", sizes[-1], sizes[0], decreasing)

    report.merge(engine.decay_check(t0, x0, t0 + dynamics_span))

    # properness: images of R e grow with R
    e = np.zeros(block.dim)
    e[0] = 1.0
    composed = engine.conjugacy_map("all", TOWARD_LINEAR)
    norms = [vnorm(composed(t0, R * e)) for R in (1.0, 2.0, 4.0)]
    report.add("properness", "|map(t0, R e)| increasing for R = 1, 2, 4", norms[-1], norms[0],
               all(b > a for a, b in zip(norms, norms[1:])))
    return report
