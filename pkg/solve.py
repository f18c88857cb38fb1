"""
Solutions of DEPCAG systems: initial value problems with the per-interval
anchor solve, the bounded solution by Picard iteration of the integral map,
and the variation-of-constants formula with the block Green kernel
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import lu_factor, lu_solve

from integrator import integrate, step_count
from models import (
    SINGULAR_DET, BlockSystem, ConvergenceError, DepcagError, DepcagSystem, DichotomySpec,
    HypothesisError, NonFiniteError, NonlinearTerm, NumericsConfig, SingularFactorError,
    TimeGrid, WindowError, vnorm,
)
from transition import TransitionOperator
from verify import (
    GAUSS_NODES, GAUSS_WEIGHTS, GrowthConstants, HypothesisReport, check_theorem1,
    continuity_exponent, f_factor, growth_constants, sup_norm,
)

logger = logging.getLogger("depcag")

RHS = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


# Trajectories

@dataclass(frozen=True, eq=False)
class Segment:
    """Samples of one smooth leg (no knot or anchor inside), ascending in time."""
    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    def reversed(self) -> "Segment":
        return Segment(self.times[::-1], self.values[::-1], self.derivs[::-1])


class Trajectory:
    """
    Solution of a DEPCAG between tau and t_end, stored leg by leg with
    derivatives so it evaluates through cubic Hermite interpolation.
    meta["iterations"] maps interval index to anchor fixed-point iterations.
    """

    def __init__(self, grid: TimeGrid, segments: Sequence[Segment], tau: float, t_end: float,
                 meta: Optional[dict] = None):
        segments = sorted(segments, key=lambda seg: float(seg.times[0]))
        if len(segments) > 1:
            segments = [seg for seg in segments if seg.times.size > 1] or segments[:1]
        self.grid = grid
        self.segments = tuple(segments)
        self.tau = float(tau)
        self.t_end = float(t_end)
        self.meta = meta or {}
        self._starts = np.array([float(seg.times[0]) for seg in self.segments])
        self._splines: Dict[int, CubicHermiteSpline] = {}

    @property
    def dim(self) -> int:
        return int(self.segments[0].values.shape[1])

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.segments[0].times[0]), float(self.segments[-1].times[-1])

    def rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sample times (knot duplicates removed) and the states there."""
        times = np.concatenate([seg.times for seg in self.segments])
        values = np.concatenate([seg.values for seg in self.segments])
        unique, index = np.unique(times, return_index=True)
        return unique, values[index]

    @property
    def times(self) -> np.ndarray:
        return self.rows()[0]

    @property
    def values(self) -> np.ndarray:
        return self.rows()[1]

    def _spline(self, k: int) -> CubicHermiteSpline:
        spline = self._splines.get(k)
        if spline is None:
            seg = self.segments[k]
            spline = CubicHermiteSpline(seg.times, seg.values, seg.derivs, axis=0)
            self._splines[k] = spline
        return spline

    def many(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        lo, hi = self.span
        slack = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(ts < lo - slack) or np.any(ts > hi + slack):
            raise WindowError(f"trajectory covers [{lo}, {hi}], queried outside it")
        ts = np.clip(ts, lo, hi)
        out = np.empty((ts.size, self.dim))
        which = np.clip(np.searchsorted(self._starts, ts, side="right") - 1, 0, len(self.segments) - 1)
        for k in np.unique(which):
            mask = which == k
            seg = self.segments[k]
            if seg.times.size == 1:
                out[mask] = seg.values[0]
            else:
                out[mask] = self._spline(int(k))(ts[mask])
        return out

    def __call__(self, t: float) -> np.ndarray:
        return self.many([t])[0]

    @property
    def final(self) -> np.ndarray:
        return self(self.t_end)

    @classmethod
    def join(cls, backward: "Trajectory", forward: "Trajectory") -> "Trajectory":
        meta = {"iterations": {**backward.meta.get("iterations", {}), **forward.meta.get("iterations", {})}}
        return cls(forward.grid, backward.segments + forward.segments, forward.tau, forward.t_end, meta)

    def __repr__(self):
        lo, hi = self.span
        return f"<Trajectory(n={self.dim}, span=[{lo}, {hi}], legs={len(self.segments)})>"


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """
    Vector function on sample times. With slopes it is cubic Hermite between
    neighbouring samples (a sample may carry different one-sided slopes,
    as at knots); without them it is piecewise linear.
    """
    times: np.ndarray
    values: np.ndarray
    slope_right: Optional[np.ndarray] = None
    slope_left: Optional[np.ndarray] = None

    @classmethod
    def from_nodes(cls, times: np.ndarray, values: np.ndarray,
                   derivs: Optional[np.ndarray] = None) -> "SampledFunction":
        """Repeated times keep the first value; their slopes split into left and right."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        unique, first = np.unique(times, return_index=True)
        if derivs is None:
            return cls(unique, values[first])
        _, last_rev = np.unique(times[::-1], return_index=True)
        last = times.size - 1 - last_rev
        derivs = np.asarray(derivs, dtype=float)
        return cls(unique, values[first], derivs[last], derivs[first])

    def __call__(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if self.slope_right is None or self.times.size < 2:
            out = np.stack([np.interp(ts, self.times, self.values[:, k])
                            for k in range(self.values.shape[1])], axis=1)
            return out[0] if np.ndim(t) == 0 else out
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.times.size - 2)
        width = (self.times[k + 1] - self.times[k])[:, None]
        s = np.clip((ts - self.times[k])[:, None] / width, 0.0, 1.0)
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = (h00 * self.values[k] + h10 * width * self.slope_right[k]
               + h01 * self.values[k + 1] + h11 * width * self.slope_left[k + 1])
        return out[0] if np.ndim(t) == 0 else out

    def sup_norm(self, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
        mask = np.ones(self.times.size, dtype=bool)
        if lo is not None:
            mask &= self.times >= lo
        if hi is not None:
            mask &= self.times <= hi
        return float(np.max(np.abs(self.values[mask]))) if mask.any() else 0.0


# Initial value problems

def _march(rhs: RHS, t0: float, z0: np.ndarray, t1: float, max_step: float, c: np.ndarray) -> Segment:
    steps = step_count(t1 - t0, max_step)
    h = (t1 - t0) / steps
    times = t0 + h * np.arange(steps + 1)
    times[-1] = t1
    values = np.empty((steps + 1, z0.size))
    derivs = np.empty_like(values)
    z = z0
    values[0] = z
    for k in range(steps):
        t = times[k]
        k1 = rhs(t, z, c)
        k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1, c)
        k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2, c)
        k4 = rhs(t + h, z + h * k3, c)
        derivs[k] = k1
        z = z + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        values[k + 1] = z
    derivs[-1] = rhs(t1, z, c)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite state between t={t0} and t={t1}")
    if h < 0:
        return Segment(times, values, derivs).reversed()
    return Segment(times, values, derivs)


def anchor_iteration_cap(upsilon: Optional[float], numerics: NumericsConfig) -> int:
    """ceil(log fp_tol / log upsilon) + 5 for a contraction, max_iters otherwise."""
    if upsilon is None or upsilon >= 1:
        return numerics.max_iters
    if upsilon <= 0:
        return 5
    return int(math.ceil(math.log(numerics.fp_tol) / math.log(upsilon))) + 5


def _anchor_affine(rhs: RHS, t: float, z: np.ndarray, zeta: float, step: float, r: int) -> np.ndarray:
    """c = z(zeta) for right-hand sides affine in c, by superposition."""
    n = z.size
    base = integrate(lambda s, y: rhs(s, y, np.zeros(n)), t, z, zeta, step)
    columns = []
    for e in np.eye(n):
        columns.append(integrate(lambda s, y, e=e: rhs(s, y, e), t, z, zeta, step) - base)
    system = np.eye(n) - np.column_stack(columns)
    det = np.linalg.det(system)
    if abs(det) < SINGULAR_DET:
        raise SingularFactorError(r, det)
    return lu_solve(lu_factor(system), base)


def _anchor_iterate(rhs: RHS, t: float, z: np.ndarray, zeta: float, step: float, r: int,
                    tol: float, cap: int) -> Tuple[np.ndarray, int]:
    c = z.copy()
    for k in range(cap):
        c_next = integrate(lambda s, y: rhs(s, y, c), t, z, zeta, step)
        delta = vnorm(c_next - c)
        c = c_next
        if delta <= tol:
            return c, k + 1
    raise ConvergenceError(f"anchor fixed point did not converge on interval {r} after {cap} iterations", r)


def integrate_depcag(grid: TimeGrid, rhs: RHS, tau: float, xi, t_end: float, numerics: NumericsConfig,
                     affine: bool = False, rate: Optional[Callable[[int, float], float]] = None) -> Trajectory:
    """
    Solve z'(t) = rhs(t, z(t), z(gamma(t))) from z(tau) = xi to t_end, interval
    by interval. On each interval the anchor value c = z(zeta_i) is found
    first (directly for affine right-hand sides, by fixed-point iteration
    otherwise) and then the ODE with c frozen is integrated to the exit.
    """
    tau, t_end = float(tau), float(t_end)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    for when in (tau, t_end):
        if not grid.contains(when):
            raise WindowError(f"time {when} outside the working window [{grid.t_min}, {grid.t_max}]")
    if t_end == tau:
        single = Segment(np.array([tau]), xi[None, :].copy(), np.zeros((1, xi.size)))
        return Trajectory(grid, [single], tau, t_end, {"iterations": {}})

    forward = t_end > tau
    segments = []
    iterations: Dict[int, int] = {}
    t, z = tau, xi.copy()
    while (t < t_end) if forward else (t > t_end):
        r = grid.interval_index(t)
        if not forward and t <= grid.knots[r]:
            r -= 1
        lo, hi = grid.interval(r)
        exit_ = min(hi, t_end) if forward else max(lo, t_end)
        zeta = float(grid.anchors[r])
        step = grid.substep(r, numerics.ode_step)

        if zeta == t:
            c, count = z.copy(), 0
        elif affine:
            c, count = _anchor_affine(rhs, t, z, zeta, step, r), 1
        else:
            upsilon = rate(r, abs(zeta - t)) if rate is not None else None
            cap = anchor_iteration_cap(upsilon, numerics)
            if upsilon is not None and upsilon >= 1:
                logger.warning(f"⚠️ Anchor map on interval {r} is not a contraction (upsilon={upsilon:.3g}); capping at {cap}")
            c, count = _anchor_iterate(rhs, t, z, zeta, step, r, numerics.fp_tol, cap)
        iterations[r] = count

        stops = [t, zeta, exit_] if min(t, exit_) < zeta < max(t, exit_) else [t, exit_]
        for a, b in zip(stops[:-1], stops[1:]):
            seg = _march(rhs, a, z, b, step, c)
            z = seg.values[-1] if forward else seg.values[0]
            segments.append(seg)
        t = exit_

    logger.debug(f"Solved from {tau} to {t_end} over {len(iterations)} intervals")
    return Trajectory(grid, segments, tau, t_end, {"iterations": iterations})


def system_rhs(system: DepcagSystem, forcing: Optional[Callable[[float], np.ndarray]] = None) -> RHS:
    M, M0, h = system.M, system.M0, system.h

    def rhs(t, z, c):
        out = M.at(t) @ z + M0.at(t) @ c
        if h is not None:
            out = out + h(t, z, c)
        if forcing is not None:
            out = out + forcing(t)
        return out
    return rhs


def anchor_rate(system: DepcagSystem, numerics: NumericsConfig) -> Tuple[float, Callable[[int, float], float]]:
    """Global upsilon and the per-interval contraction rate of the anchor map."""
    beta = sup_norm(system.M, system.grid, numerics.spot_samples)
    beta0 = sup_norm(system.M0, system.grid, numerics.spot_samples)
    ell = system.h.lipschitz_l if system.h is not None else 0.0
    upsilon = continuity_exponent(beta, beta0, ell, system.grid.theta)["upsilon"]

    def rate(r: int, d: float) -> float:
        return f_factor(beta, ell, d) * (beta0 + ell) * d
    return upsilon, rate


def _check_state(system, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != system.dim:
        raise DepcagError(f"state has {xi.size} components, system dimension is {system.dim}")
    return xi


def solve_ivp(system: DepcagSystem, tau: float, xi, t_end: float,
              numerics: Optional[NumericsConfig] = None) -> Trajectory:
    """z(tau) = xi continued forward (t_end > tau) or backward (t_end < tau)."""
    numerics = numerics or NumericsConfig()
    xi = _check_state(system, xi)
    rate = None
    if not system.is_linear:
        upsilon, rate = anchor_rate(system, numerics)
        if upsilon >= 1:
            raise HypothesisError("eq14", f"(upsilon={upsilon:.6g} >= 1, anchor map is not a contraction)")
    return integrate_depcag(system.grid, system_rhs(system), tau, xi, t_end, numerics,
                            affine=system.is_linear, rate=rate)


def solve_forced(system: DepcagSystem, forcing: Callable[[float], np.ndarray], tau: float, xi,
                 t_end: float, numerics: Optional[NumericsConfig] = None) -> Trajectory:
    """Linear part of `system` driven by the external forcing g(t)."""
    numerics = numerics or NumericsConfig()
    xi = _check_state(system, xi)
    return integrate_depcag(system.grid, system_rhs(system.linear_part(), forcing), tau, xi, t_end,
                            numerics, affine=True)


def solve_span(system: DepcagSystem, tau: float, xi, a: float, b: float,
               numerics: Optional[NumericsConfig] = None) -> Trajectory:
    """The solution through (tau, xi) on [a, b] (a <= tau <= b)."""
    backward = solve_ivp(system, tau, xi, a, numerics)
    forward = solve_ivp(system, tau, xi, b, numerics)
    return Trajectory.join(backward, forward)


# Variation of constants

def linear_response(op: TransitionOperator, tau: float, xi, t: float,
                    forcing: Callable[[float], np.ndarray]) -> np.ndarray:
    """
    z(t) = Z(t, tau) xi + int G(t, s, tau) g(s) ds for z' = M z + M0 z(gamma) + g(t),
    z(tau) = xi, with the signed kernel of TransitionOperator.kernel_from.
    The integral runs piecewise between knots, anchors, tau and t.
    """
    grid = op.grid
    xi = np.asarray(xi, dtype=float).reshape(-1)
    i, j = grid.interval_index(tau), grid.interval_index(t)
    lo = float(grid.knots[min(i, j)])
    hi = float(grid.knots[max(i, j) + 1])
    inner = [float(v) for v in np.concatenate([grid.knots, grid.anchors]) if lo < v < hi]
    breaks = np.unique([lo, hi, float(tau), float(t)] + inner)
    total = op.transition_z(t, tau) @ xi
    for a, b in zip(breaks[:-1], breaks[1:]):
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        for xk, wk in zip(GAUSS_NODES, GAUSS_WEIGHTS):
            s = mid + half * xk
            total = total + half * wk * (op.kernel_from(t, s, tau) @ np.asarray(forcing(s), dtype=float))
    return total


def continuity_bound_check(block: BlockSystem, tau: float, xi, xi2, t: float,
                           numerics: Optional[NumericsConfig] = None,
                           system: Optional[DepcagSystem] = None) -> HypothesisReport:
    """|z(t,tau,xi') - z(t,tau,xi)| <= |xi - xi'| exp(p(l)|t - tau|) with l = omega."""
    numerics = numerics or NumericsConfig()
    system = system or block.full_system()
    constants = continuity_exponent(block.beta, block.beta0, block.omega, block.grid.theta)
    report = HypothesisReport(constants=dict(constants))
    if constants["upsilon"] >= 1:
        report.add("continuity", "upsilon < 1", constants["upsilon"], 1.0, False,
                   note="continuity estimate needs upsilon < 1")
        return report
    xi, xi2 = np.asarray(xi, dtype=float), np.asarray(xi2, dtype=float)
    z1 = solve_ivp(system, tau, xi, t, numerics).final
    z2 = solve_ivp(system, tau, xi2, t, numerics).final
    lhs = vnorm(z2 - z1)
    rhs = vnorm(xi - xi2) * math.exp(constants["p_l"] * abs(t - tau))
    report.add("continuity", "|z(t,tau,xi') - z(t,tau,xi)| <= |xi - xi'| exp(p(l)|t - tau|)",
               lhs, rhs, lhs <= rhs * (1 + 1e-9) + 1e-12)
    return report


# Bounded solution

def tail_horizon(bigK: float, alpha: float, rho_tilde: float, r: float, sigma: float, mu: float,
                 tail_tol: float) -> float:
    """Smallest T_h with K rho~ (2 r sigma + mu) exp(-alpha T_h) / alpha <= tail_tol."""
    amplitude = bigK * rho_tilde * (2 * r * sigma + mu) / alpha
    if not math.isfinite(amplitude):
        raise WindowError("tail bound is infinite; no finite horizon")
    if amplitude <= tail_tol:
        return 0.0
    return math.log(amplitude / tail_tol) / alpha


def snap_span(grid: TimeGrid, span: Optional[Tuple[float, float]]) -> Tuple[int, int]:
    """Knot indices (k0, k1) of the smallest knot-aligned window covering span."""
    if span is None:
        return 0, grid.n_intervals
    a, b = sorted(float(v) for v in span)
    k0 = max(int(np.searchsorted(grid.knots, a, side="right")) - 1, 0)
    k1 = min(int(np.searchsorted(grid.knots, b, side="left")), grid.n_intervals)
    if k1 <= k0:
        k1 = min(k0 + 1, grid.n_intervals)
        k0 = k1 - 1
    return k0, k1


def _split(a: float, b: float, step: float) -> np.ndarray:
    if b <= a:
        return np.array([a])
    return np.linspace(a, b, max(1, int(math.ceil((b - a) / step - 1e-9))) + 1)


class OmegaGrid:
    """
    Sample nodes of the bounded-solution map on knots k0..k1: every interval
    is sampled with spacing <= step on both sides of its anchor (knots appear
    once per adjacent interval), plus one midpoint per node pair for Simpson
    quadrature. Transition data at the nodes is computed once.
    """

    def __init__(self, op: TransitionOperator, d: DichotomySpec, k0: int, k1: int, step: float):
        grid = op.grid
        n = op.n
        U_knots, V_knots = op.knot_transitions()
        P, Q = d.projection, d.complement
        t_parts, q_parts, mid_parts, pair_parts = [], [], [], []
        A_parts, B_parts, phi_from, phi_to, phi_to_mid = [], [], [], [], []
        anchors, first, last = [], [], []
        offset = 0
        for q, r in enumerate(range(k0, k1)):
            lo, hi = grid.interval(r)
            zeta = float(grid.anchors[r])
            left = _split(lo, zeta, step)
            nodes = np.concatenate([left[:-1], _split(zeta, hi, step)])
            mids = 0.5 * (nodes[1:] + nodes[:-1])
            sweep_times = np.empty(2 * nodes.size - 1)
            sweep_times[0::2] = nodes
            sweep_times[1::2] = mids
            sweep = op.interval_sweep(r, sweep_times)
            inv_left = lu_solve(op.factors(r).lu_left, np.eye(n))
            U = sweep["E"][0::2] @ (inv_left @ U_knots[r])
            A_parts.append(U @ P)
            B_parts.append(U @ Q)
            phi_from.append(sweep["phi_from"][0::2])
            phi_to.append(sweep["phi_to"][0::2])
            phi_to_mid.append(sweep["phi_to"][1::2])
            t_parts.append(nodes)
            q_parts.append(np.full(nodes.size, q))
            mid_parts.append(mids)
            pair_parts.append(offset + np.arange(nodes.size - 1))
            anchors.append(offset + left.size - 1)
            first.append(offset)
            last.append(offset + nodes.size - 1)
            offset += nodes.size

        self.k0, self.k1 = k0, k1
        self.step = step
        self.t = np.concatenate(t_parts)
        self.node_q = np.concatenate(q_parts)
        self.mid_t = np.concatenate(mid_parts)
        self.pair_left = np.concatenate(pair_parts)
        self.anchor_index = np.array(anchors)
        self.node_anchor = self.anchor_index[self.node_q]
        self.mid_anchor = self.anchor_index[self.node_q[self.pair_left]]
        self.first = np.array(first)
        self.last = np.array(last)
        self.A = np.concatenate(A_parts)
        self.B = np.concatenate(B_parts)
        self.phi_from = np.concatenate(phi_from)
        self.phi_to = np.concatenate(phi_to)
        self.phi_to_mid = np.concatenate(phi_to_mid)
        self.V = V_knots[k0:k1 + 1]
        self.n = n
        self.op = op

    @property
    def size(self) -> int:
        return int(self.t.size)

    def derivatives(self, phi: np.ndarray, h: NonlinearTerm) -> np.ndarray:
        """z'(t) at every node, one-sided within the node's own interval."""
        frozen = phi[self.node_anchor]
        return (np.einsum("kij,kj->ki", self.op.M.many(self.t), phi)
                + np.einsum("kij,kj->ki", self.op.M0.many(self.t), frozen)
                + h.many(self.t, phi, frozen))

    def sampled(self, phi: np.ndarray, h: NonlinearTerm) -> SampledFunction:
        return SampledFunction.from_nodes(self.t, phi, self.derivatives(phi, h))

    def apply(self, phi: np.ndarray, h: NonlinearTerm) -> np.ndarray:
        """One application of the bounded-solution map to node values phi (size, n)."""
        pl = self.pair_left
        h_nodes = h.many(self.t, phi, phi[self.node_anchor])
        h_mids = h.many(self.mid_t, 0.5 * (phi[pl] + phi[pl + 1]), phi[self.mid_anchor])
        g = np.einsum("kij,kj->ki", self.phi_to, h_nodes)
        g_mid = np.einsum("kij,kj->ki", self.phi_to_mid, h_mids)

        # cumulative Simpson, restarted in every interval, oriented from the anchor
        increments = np.zeros((self.size, self.n))
        dt = (self.t[pl + 1] - self.t[pl])[:, None]
        increments[pl + 1] = dt * (g[pl] + 4.0 * g_mid + g[pl + 1]) / 6.0
        cumulative = np.cumsum(increments, axis=0)
        F = cumulative - cumulative[self.node_anchor]
        local = np.einsum("kij,kj->ki", self.phi_from, F)

        sources = np.zeros((self.k1 - self.k0 + 1, self.n))
        sources[:-1] -= local[self.first]
        sources[1:] += local[self.last]
        weighted = np.einsum("qij,qj->qi", self.V, sources)
        prefix = np.cumsum(weighted, axis=0)
        stable = prefix[self.node_q]
        unstable = prefix[-1][None, :] - stable
        return (np.einsum("kij,kj->ki", self.A, stable)
                - np.einsum("kij,kj->ki", self.B, unstable) + local)


def omega_grid(op: TransitionOperator, d: DichotomySpec, k0: int, k1: int, step: float,
               grids: Optional[Dict[tuple, OmegaGrid]] = None) -> OmegaGrid:
    if grids is None:
        return OmegaGrid(op, d, k0, k1, step)
    key = (k0, k1, step)
    cached = grids.get(key)
    if cached is None:
        cached = grids.setdefault(key, OmegaGrid(op, d, k0, k1, step))
    return cached


@dataclass(frozen=True, eq=False)
class BoundedSolution:
    phi0: SampledFunction
    sigma: float
    residual: float
    iterations: int
    core: Tuple[float, float]
    horizon: float
    probe_defect: Optional[float] = None
    report: HypothesisReport = field(default_factory=HypothesisReport)

    def __call__(self, t):
        return self.phi0(t)

    @property
    def sup_norm(self) -> float:
        return self.phi0.sup_norm(*self.core)


def _picard(omega: OmegaGrid, h: NonlinearTerm, start: np.ndarray, numerics: NumericsConfig) -> Tuple[np.ndarray, int]:
    phi = start
    for k in range(numerics.max_iters):
        nxt = omega.apply(phi, h)
        delta = float(np.max(np.abs(nxt - phi)))
        phi = nxt
        logger.debug(f"Picard sweep {k + 1}: sup|T(phi) - phi| = {delta:.3e}")
        if delta <= numerics.picard_tol:
            return phi, k + 1
    raise ConvergenceError(f"Picard iteration did not reach {numerics.picard_tol} in {numerics.max_iters} sweeps")


def bounded_solution(system: DepcagSystem, d: DichotomySpec, numerics: Optional[NumericsConfig] = None,
                     span: Optional[Tuple[float, float]] = None, growth: Optional[GrowthConstants] = None,
                     probe: bool = True, op: Optional[TransitionOperator] = None,
                     grids: Optional[Dict[tuple, OmegaGrid]] = None) -> BoundedSolution:
    """
    The unique bounded solution, as the fixed point of the integral map over
    the Green kernel, iterated from phi = 0. Values are trusted on the core
    window, the sampled window shrunk by the tail horizon on both sides.
    Pass the same `op` and `grids` dict to reuse transition data across
    systems sharing one linear part.
    """
    numerics = numerics or NumericsConfig()
    growth = growth or growth_constants(system, d, numerics)
    report = check_theorem1(system, d, numerics, growth)
    report.require("eq10a", "eq10b", "sigma")
    sigma = report.constants["sigma"]
    h = system.h
    r, mu = (h.growth_r, h.offset_mu) if h is not None else (0.0, 0.0)

    grid = system.grid
    k0, k1 = snap_span(grid, span)
    a, b = float(grid.knots[k0]), float(grid.knots[k1])
    horizon = tail_horizon(d.bigK, d.alpha, growth.rho_tilde, r, sigma, mu, numerics.tail_tol)
    core = (a + horizon, b - horizon)
    if core[0] > core[1]:
        raise WindowError(f"horizon {horizon:.4g} needs a window longer than {2 * horizon:.4g}, got [{a}, {b}]")
    report.constants.update({"horizon": horizon, "core_start": core[0], "core_end": core[1]})

    op = op or TransitionOperator(system.linear_part(), numerics)
    step = min(4 * numerics.ode_step, grid.theta / 16)
    omega = omega_grid(op, d, k0, k1, step, grids)
    if h is None:
        zero = SampledFunction.from_nodes(omega.t, np.zeros((omega.size, system.dim)))
        return BoundedSolution(zero, sigma, 0.0, 0, core, horizon, 0.0 if probe else None, report)

    phi, iterations = _picard(omega, h, np.zeros((omega.size, system.dim)), numerics)
    solution = omega.sampled(phi, h)

    # residual with half the quadrature step
    fine = omega_grid(op, d, k0, k1, step / 2, grids)
    current = solution(fine.t)
    in_core = (fine.t >= core[0]) & (fine.t <= core[1])
    residual = float(np.max(np.abs(fine.apply(current, h) - current)[in_core])) if in_core.any() else 0.0
    sup = solution.sup_norm(*core)
    report.add("residual", "sup|T(phi0) - phi0| <= picard_tol", residual, numerics.picard_tol,
               residual <= numerics.picard_tol, note="half quadrature step, core window")
    report.add("sup_bound", "sup|phi0| <= sigma + picard_tol", sup, sigma + numerics.picard_tol,
               sup <= sigma + numerics.picard_tol)
    for name in ("residual", "sup_bound"):
        entry = report.checks[name]
        if not entry.passed:
            raise ConvergenceError(f"bounded solution fails {name}: {entry.inequality} "
                                   f"(lhs={entry.lhs:.3e}, rhs={entry.rhs:.3e})")

    probe_defect = None
    if probe:
        start = np.zeros((omega.size, system.dim))
        start[:, 0] = sigma if 0 < sigma < math.inf else 1.0
        other, _ = _picard(omega, h, start, numerics)
        node_core = (omega.t >= core[0]) & (omega.t <= core[1])
        probe_defect = float(np.max(np.abs(other - phi)[node_core])) if node_core.any() else 0.0

    logger.debug(f"Bounded solution: {iterations} sweeps, residual {residual:.3e}, core {core}")
    return BoundedSolution(solution, sigma, residual, iterations, core, horizon, probe_defect, report)
