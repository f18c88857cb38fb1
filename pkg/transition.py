"""
Transition matrices of linear DEPCAGs: fundamental matrix, the interval
matrices J and E, the transition matrix Z built from interval products,
the dichotomy-split kernel and the Green kernels
"""

import logging
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from integrator import integrate, linear_sweep
from models import (
    SINGULAR_DET, DepcagError, DepcagSystem, DichotomySpec, NumericsConfig,
    SingularFactorError, WindowError, opnorm,
)

logger = logging.getLogger("depcag")


@dataclass(frozen=True)
class IntervalFactors:
    """E(t_r, zeta_r) and E(t_r+1, zeta_r) with their LU factors and the knot-to-knot transitions."""
    e_left: np.ndarray
    e_right: np.ndarray
    lu_left: tuple
    lu_right: tuple
    forward: np.ndarray   # Z(t_r+1, t_r)
    backward: np.ndarray  # Z(t_r, t_r+1)


def _lu(matrix: np.ndarray, interval: int) -> tuple:
    det = np.linalg.det(matrix)
    if abs(det) < SINGULAR_DET:
        raise SingularFactorError(interval, det)
    return lu_factor(matrix)


def _right_divide(a: np.ndarray, lu: tuple) -> np.ndarray:
    """a @ inv(B) given the LU factors of B."""
    return lu_solve(lu, a.T, trans=1).T


class TransitionOperator:
    """
    Evaluates Phi, J, E, Z, Z_P and the Green kernel of the linear part of a
    DepcagSystem. Interval-endpoint factors are cached per interval.
    """

    def __init__(self, system: DepcagSystem, numerics: NumericsConfig):
        self.system = system
        self.grid = system.grid
        self.M = system.M
        self.M0 = system.M0
        self.n = system.dim
        self.numerics = numerics
        self.base = min(max(0.0, self.grid.t_min), self.grid.t_max)
        self._lock = threading.Lock()
        self._factors: Dict[int, IntervalFactors] = {}
        self._knot_cache: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}
        self._eye = np.eye(self.n)

    # basic matrices

    def _check_time(self, t: float):
        if not self.grid.contains(t):
            raise WindowError(f"time {t} outside the working window [{self.grid.t_min}, {self.grid.t_max}]")

    def _common_interval(self, a: float, b: float) -> int:
        for r in {self.grid.interval_index(a), self.grid.interval_index(b)}:
            lo, hi = self.grid.interval(r)
            if lo <= a <= hi and lo <= b <= hi:
                return r
        # knot shared by neighbouring intervals
        r = self.grid.interval_index(min(a, b))
        lo, hi = self.grid.interval(r)
        if lo <= a <= hi and lo <= b <= hi:
            return r
        raise DepcagError(f"times {a} and {b} are not in the closure of one interval")

    def fundamental(self, t: float, s: float) -> np.ndarray:
        """Phi(t, s), integrated from s to t directly, split at knots."""
        self._check_time(t)
        self._check_time(s)
        if t == s:
            return self._eye.copy()
        points = [s] + sorted(self.grid.knots_between(s, t), reverse=t < s) + [t]
        x = self._eye
        for a, b in zip(points[:-1], points[1:]):
            r = self.grid.interval_index(0.5 * (a + b))
            x = linear_sweep(self.M, a, x, [b], self.grid.substep(r, self.numerics.ode_step))[0]
        return x

    def j_matrix(self, t: float, tau: float) -> np.ndarray:
        """J(t, tau) = I + int_tau^t Phi(tau, s) M0(s) ds for t, tau in one closed interval."""
        self._check_time(t)
        self._check_time(tau)
        r = self._common_interval(t, tau)
        if t == tau:
            return self._eye.copy()
        M, M0 = self.M, self.M0

        def field(s, state):
            y = state[0]
            return np.stack([-y @ M.at(s), y @ M0.at(s)])

        state0 = np.stack([self._eye, np.zeros((self.n, self.n))])
        state = integrate(field, tau, state0, t, self.grid.substep(r, self.numerics.ode_step))
        J = self._eye + state[1]
        det = np.linalg.det(J)
        if abs(det) < SINGULAR_DET:
            raise SingularFactorError(r, det)
        return J

    def e_matrix(self, t: float, tau: float) -> np.ndarray:
        """E(t, tau) = Phi(t, tau) J(t, tau)."""
        J = self.j_matrix(t, tau)
        if t == tau:
            return J
        return self.fundamental(t, tau) @ J

    # interval factors

    def factors(self, r: int) -> IntervalFactors:
        cached = self._factors.get(r)
        if cached is not None:
            return cached
        t_r, t_next = self.grid.interval(r)
        zeta = float(self.grid.anchors[r])
        e_left = self.e_matrix(t_r, zeta)
        e_right = self.e_matrix(t_next, zeta)
        lu_left = _lu(e_left, r)
        lu_right = _lu(e_right, r)
        built = IntervalFactors(
            e_left, e_right, lu_left, lu_right,
            forward=_right_divide(e_right, lu_left),
            backward=_right_divide(e_left, lu_right),
        )
        with self._lock:
            return self._factors.setdefault(r, built)

    def prepopulate(self):
        for r in range(self.grid.n_intervals):
            self.factors(r)

    def _local(self, t: float, r: int, knot_side: str) -> np.ndarray:
        """Z(t, t_r) ("left") or Z(t, t_r+1) ("right") for t in the closure of interval r."""
        fac = self.factors(r)
        zeta = float(self.grid.anchors[r])
        e_t = self.e_matrix(t, zeta)
        return _right_divide(e_t, fac.lu_left if knot_side == "left" else fac.lu_right)

    def _local_inverse(self, s: float, r: int, knot_side: str) -> np.ndarray:
        """Z(t_r, s) ("left") or Z(t_r+1, s) ("right")."""
        fac = self.factors(r)
        zeta = float(self.grid.anchors[r])
        e_s = self.e_matrix(s, zeta)
        lu_s = _lu(e_s, r)
        return _right_divide(fac.e_left if knot_side == "left" else fac.e_right, lu_s)

    def transition_z(self, t: float, s: float) -> np.ndarray:
        """Z(t, s) by the backward (t > s) or forward (t < s) product of interval factors."""
        self._check_time(t)
        self._check_time(s)
        if t == s:
            return self._eye.copy()
        j = self.grid.interval_index(t)
        i = self.grid.interval_index(s)
        if i == j:
            zeta = float(self.grid.anchors[i])
            return _right_divide(self.e_matrix(t, zeta), _lu(self.e_matrix(s, zeta), i))
        if j > i:
            z = self._local_inverse(s, i, "right")            # Z(t_i+1, s)
            for r in range(i + 1, j):
                z = self.factors(r).forward @ z               # Z(t_r+1, t_r)
            return self._local(t, j, "left") @ z              # Z(t, t_j)
        z = self._local_inverse(s, i, "left")                 # Z(t_i, s)
        for r in range(i - 1, j, -1):
            z = self.factors(r).backward @ z                  # Z(t_r, t_r+1)
        return self._local(t, j, "right") @ z                 # Z(t, t_j+1)

    def knot_transitions(self, base: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Arrays U[r] = Z(t_r, base) and V[r] = Z(base, t_r) over every knot."""
        base = self.base if base is None else float(base)
        cached = self._knot_cache.get(base)
        if cached is not None:
            return cached
        knots = self.grid.knots
        N = knots.size
        k = self.grid.interval_index(base)
        U = np.empty((N, self.n, self.n))
        V = np.empty((N, self.n, self.n))
        U[k] = self.transition_z(float(knots[k]), base)
        V[k] = self.transition_z(base, float(knots[k]))
        for r in range(k, N - 1):
            fac = self.factors(r)
            U[r + 1] = fac.forward @ U[r]
            V[r + 1] = V[r] @ fac.backward
        for r in range(k - 1, -1, -1):
            fac = self.factors(r)
            U[r] = fac.backward @ U[r + 1]
            V[r] = V[r + 1] @ fac.forward
        with self._lock:
            self._knot_cache[base] = (U, V)
        return U, V

    def interval_sweep(self, r: int, times: np.ndarray) -> Dict[str, np.ndarray]:
        """
        For sorted times in the closure of interval r return E(t, zeta_r),
        Phi(t, zeta_r) and Phi(zeta_r, t), each integrated outward from zeta_r.
        """
        times = np.asarray(times, dtype=float)
        zeta = float(self.grid.anchors[r])
        step = self.grid.substep(r, self.numerics.ode_step)
        out = {
            "E": np.empty((times.size, self.n, self.n)),
            "phi_from": np.empty((times.size, self.n, self.n)),
            "phi_to": np.empty((times.size, self.n, self.n)),
        }
        right = np.nonzero(times >= zeta)[0]
        left = np.nonzero(times < zeta)[0][::-1]
        for idx in (right, left):
            if idx.size == 0:
                continue
            targets = times[idx]
            out["E"][idx] = linear_sweep(self.M, zeta, self._eye, targets, step, forcing=self.M0)
            out["phi_from"][idx] = linear_sweep(self.M, zeta, self._eye, targets, step)
            out["phi_to"][idx] = linear_sweep(self.M, zeta, self._eye, targets, step, adjoint=True)
        return out

    def interval_bounds_check(self, rho: float, rho0: float, samples: int,
                              rng: np.random.Generator) -> Tuple[float, float]:
        """max |Phi(t,s)|/rho and max |Z(t,s)|/rho0 over random pairs sharing one interval."""
        worst_phi = worst_z = 0.0
        for _ in range(samples):
            r = int(rng.integers(self.grid.n_intervals))
            lo, hi = self.grid.interval(r)
            t, s = rng.uniform(lo, hi, 2)
            worst_phi = max(worst_phi, opnorm(self.fundamental(t, s)) / rho)
            worst_z = max(worst_z, opnorm(self.transition_z(t, s)) / rho0)
        return worst_phi, worst_z

    # dichotomy kernels

    def _split(self, t: float, s: float, d: DichotomySpec, stable: bool) -> np.ndarray:
        U = self.transition_z(t, self.base)
        V = self.transition_z(self.base, s)
        if stable:
            return U @ d.projection @ V
        return -U @ d.complement @ V

    def z_split(self, t: float, s: float, d: DichotomySpec) -> np.ndarray:
        """Z(t,0) P Z(0,s) for t >= s, -Z(t,0)(I-P)Z(0,s) for t < s."""
        return self._split(t, s, d, stable=t >= s)

    def green(self, t: float, s: float, d: DichotomySpec) -> np.ndarray:
        """
        Green kernel of the bounded-solution formula. The source at s is
        carried to the knot of its interval on the same side of the anchor
        (t_r for s < zeta_r, t_r+1 otherwise) and from there by Z_P; the
        branch is stable iff that knot is at or before the interval holding t.
        Inside t's own interval the local piece +-Phi(t, s) between zeta_j
        and t is added.
        """
        self._check_time(t)
        self._check_time(s)
        j = self.grid.interval_index(t)
        r = self.grid.interval_index(s)
        zeta_r = float(self.grid.anchors[r])
        knot_index = r if s < zeta_r else r + 1
        knot = float(self.grid.knots[knot_index])
        G = self._split(t, knot, d, stable=knot_index <= j) @ self.fundamental(knot, s)
        if r == j:
            zeta_j = zeta_r
            if zeta_j <= s < t:
                G = G + self.fundamental(t, s)
            elif t <= s < zeta_j:
                G = G - self.fundamental(t, s)
        return G

    def green1(self, t: float, s: float, d: DichotomySpec) -> np.ndarray:
        """G~_1(t, s) = G~(t, s) for t >= s (zero otherwise)."""
        return self.green(t, s, d) if t >= s else np.zeros((self.n, self.n))

    def green2(self, t: float, s: float, d: DichotomySpec) -> np.ndarray:
        """G~_2(t, s) = -G~(t, s) for t < s (zero otherwise)."""
        return -self.green(t, s, d) if t < s else np.zeros((self.n, self.n))

    def kernel_from(self, t: float, s: float, tau: float) -> np.ndarray:
        """
        Signed variation-of-constants density with base time tau:
        z(t) = Z(t, tau) xi + integral over the real line of kernel_from(t, s, tau) g(s) ds
        for z' = M z + M0 z(gamma) + g(t), z(tau) = xi. Orientation signs of
        the oriented integrals are folded in, so the density vanishes off
        the hull of tau, t and the anchors involved.
        """
        grid = self.grid
        j = grid.interval_index(t)
        i = grid.interval_index(tau)
        r = grid.interval_index(s)
        G = np.zeros((self.n, self.n))

        # anchor piece of tau's interval: Z(t, tau) * oriented int_tau^zeta_i Phi(tau, s)
        zeta_i = float(grid.anchors[i])
        if min(tau, zeta_i) <= s <= max(tau, zeta_i) and tau != zeta_i:
            sign = 1.0 if zeta_i > tau else -1.0
            G = G + sign * self.transition_z(t, tau) @ self.fundamental(tau, s)

        # knot sources between tau and t
        zeta_r = float(grid.anchors[r])
        if j > i:
            if i + 1 <= r <= j and grid.knots[r] <= s < zeta_r:
                G = G + self.transition_z(t, float(grid.knots[r])) @ self.fundamental(float(grid.knots[r]), s)
            if i <= r <= j - 1 and zeta_r <= s < grid.knots[r + 1]:
                knot = float(grid.knots[r + 1])
                G = G + self.transition_z(t, knot) @ self.fundamental(knot, s)
        elif j < i:
            if j + 1 <= r <= i and grid.knots[r] <= s < zeta_r:
                G = G - self.transition_z(t, float(grid.knots[r])) @ self.fundamental(float(grid.knots[r]), s)
            if j <= r <= i - 1 and zeta_r <= s < grid.knots[r + 1]:
                knot = float(grid.knots[r + 1])
                G = G - self.transition_z(t, knot) @ self.fundamental(knot, s)

        # local piece of t's interval: oriented int_zeta_j^t Phi(t, s)
        zeta_j = float(grid.anchors[j])
        if zeta_j <= s <= t:
            G = G + self.fundamental(t, s)
        elif t <= s < zeta_j:
            G = G - self.fundamental(t, s)
        return G


class BlockTransition:
    """Transition operators of the two decoupled blocks with a shared base time tau."""

    def __init__(self, x_op: TransitionOperator, y_op: TransitionOperator, tau: float = 0.0):
        self.x = x_op
        self.y = y_op
        self.tau = tau

    def operator(self, which: int) -> TransitionOperator:
        if which == 1:
            return self.x
        if which == 2:
            return self.y
        raise ValueError(f"block index must be 1 or 2, got {which}")

    def green_block(self, t: float, s: float, which: int) -> np.ndarray:
        """G_1 (x block) or G_2 (y block) at base time tau."""
        return self.operator(which).kernel_from(t, s, self.tau)

    def transition(self, t: float, s: float) -> np.ndarray:
        """Z(t, s) = diag(Z_1(t, s), Z_2(t, s))."""
        z1 = self.x.transition_z(t, s)
        z2 = self.y.transition_z(t, s)
        n1, n2 = z1.shape[0], z2.shape[0]
        out = np.zeros((n1 + n2, n1 + n2))
        out[:n1, :n1] = z1
        out[n1:, n1:] = z2
        return out
