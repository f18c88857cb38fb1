"""
Fixed-step classical Runge-Kutta kernels shared by transition and solve
"""

import math
from typing import Callable, Optional, Sequence

import numpy as np

from models import MatrixField, NonFiniteError


def step_count(span: float, max_step: float) -> int:
    return max(1, int(math.ceil(abs(span) / max_step - 1e-9)))


def rk4_step(f: Callable, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """classic 4th order step"""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def integrate(f: Callable, t0: float, y0: np.ndarray, t1: float, max_step: float) -> np.ndarray:
    """March y' = f(t, y) from t0 to t1 (either direction) with equal steps <= max_step."""
    y = np.array(y0, dtype=float)
    if t1 == t0:
        return y
    n = step_count(t1 - t0, max_step)
    h = (t1 - t0) / n
    for k in range(n):
        y = rk4_step(f, t0 + k * h, y, h)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError(f"non-finite state integrating from {t0} to {t1}")
    return y


def rk4_polynomial(a: np.ndarray) -> np.ndarray:
    """One RK4 step of a constant linear field is the degree-4 Taylor polynomial of h*M."""
    eye = np.eye(a.shape[0])
    a2 = a @ a
    a3 = a2 @ a
    return eye + a + a2 / 2.0 + a3 / 6.0 + (a3 @ a) / 24.0


def linear_sweep(M: MatrixField, t0: float, x0: np.ndarray, targets: Sequence[float], max_step: float,
                 forcing: Optional[MatrixField] = None, adjoint: bool = False) -> np.ndarray:
    """
    Integrate X' = M(t) X + F(t), or the adjoint Y' = -Y M(t) when `adjoint`,
    from t0 through a monotone sequence of target times and return the
    states at the targets, shape (len(targets),) + x0.shape.
    """
    x = np.array(x0, dtype=float)
    out = np.empty((len(targets),) + x.shape)
    n = M.dim
    constant = M.is_constant and (forcing is None or forcing.is_constant)
    t = float(t0)
    for idx, target in enumerate(targets):
        target = float(target)
        if target != t:
            steps = step_count(target - t, max_step)
            h = (target - t) / steps
            if constant:
                x = _constant_segment(M, forcing, x, h, steps, adjoint, n)
            else:
                x = _varying_segment(M, forcing, x, t, h, steps, adjoint)
            t = target
        out[idx] = x
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite matrix entry integrating from {t0}")
    return out


def _constant_segment(M, forcing, x, h, steps, adjoint, n):
    if adjoint:
        step = rk4_polynomial(-h * M.constant)
        return x @ np.linalg.matrix_power(step, steps)
    if forcing is None or forcing.is_zero:
        step = rk4_polynomial(h * M.constant)
        return np.linalg.matrix_power(step, steps) @ x
    # affine field: augment with the constant block [[M, F], [0, 0]]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = h * M.constant
    aug[:n, n:] = h * forcing.constant
    power = np.linalg.matrix_power(rk4_polynomial(aug), steps)
    return power[:n, :n] @ x + power[:n, n:]


def _varying_segment(M, forcing, x, t, h, steps, adjoint):
    stage_times = t + 0.5 * h * np.arange(2 * steps + 1)
    Ms = M.many(stage_times)
    if forcing is not None:
        Fs = forcing.many(stage_times)
    else:
        Fs = np.zeros((stage_times.size,) + np.shape(x)) if not adjoint else None

    if adjoint:
        def field(i, y):
            return -y @ Ms[i]
    else:
        def field(i, y):
            return Ms[i] @ y + Fs[i]

    for k in range(steps):
        k1 = field(2 * k, x)
        k2 = field(2 * k + 1, x + 0.5 * h * k1)
        k3 = field(2 * k + 1, x + 0.5 * h * k2)
        k4 = field(2 * k + 2, x + h * k3)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return x
