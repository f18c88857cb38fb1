"""
Transition matrices against closed forms, the cocycle identity and direct
integration of the linear DEPCAG.
"""

import math

import numpy as np
import pytest

from models import DepcagError, NumericsConfig, SingularFactorError, WindowError, opnorm
from solve import linear_response, solve_forced, solve_ivp
from transition import BlockTransition, TransitionOperator

RNG = np.random.default_rng(0)
NUMERICS = NumericsConfig(ode_step=0.005)


@pytest.fixture
def cocycle_systems(linear_system):
    return {
        "scalar_decay": linear_system([[-1.0]], [[0.0]]),
        "pure_anchor": linear_system([[0.0]], [[-0.5]]),
        "rotation": linear_system([[-1.0, 0.5], [-0.5, -1.0]], 0.1 * np.eye(2),
                                  step=0.5, anchor_fraction=0.5),
    }


def _relative_defect(a: np.ndarray, b: np.ndarray) -> float:
    return opnorm(a - b) / max(1.0, opnorm(b))


def test_fundamental_matrix_closed_forms(linear_system):
    op = TransitionOperator(linear_system([[-1.0]], [[0.0]]), NUMERICS)
    assert op.fundamental(1.0, 0.0)[0, 0] == pytest.approx(math.exp(-1), abs=1e-8)
    np.testing.assert_array_equal(op.fundamental(2.5, 2.5), np.eye(1))

    op = TransitionOperator(linear_system([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2))), NUMERICS)
    quarter = op.fundamental(math.pi / 2, 0.0)
    np.testing.assert_allclose(quarter, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-8)
    assert np.linalg.det(quarter) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("m0, t, tau", [(0.7, 0.9, 0.2), (-0.3, 0.1, 1.0), (2.0, 3.5, 3.0)])
def test_j_matrix_with_constant_anchor_coefficient(linear_system, m0, t, tau):
    op = TransitionOperator(linear_system([[0.0]], [[m0]]), NUMERICS)
    assert op.j_matrix(t, tau)[0, 0] == pytest.approx(1 + m0 * (t - tau), abs=1e-12)
    np.testing.assert_array_equal(op.j_matrix(tau, tau), np.eye(1))


def test_j_matrix_singular_factor(linear_system):
    op = TransitionOperator(linear_system([[0.0]], [[-2.0]]), NUMERICS)
    with pytest.raises(SingularFactorError):
        op.j_matrix(0.5, 0.0)


def test_j_matrix_needs_one_interval(linear_system):
    op = TransitionOperator(linear_system([[0.0]], [[1.0]]), NUMERICS)
    with pytest.raises(DepcagError, match="closure of one interval"):
        op.j_matrix(2.5, 0.5)


def test_e_matrix(linear_system):
    op = TransitionOperator(linear_system([[0.0]], [[1.0]]), NUMERICS)
    assert op.e_matrix(0.5, 0.0)[0, 0] == pytest.approx(1.5, abs=1e-12)
    np.testing.assert_array_equal(op.e_matrix(0.3, 0.3), np.eye(1))

    op = TransitionOperator(linear_system([[-1.0]], [[0.0]]), NUMERICS)
    assert op.e_matrix(0.8, 0.1)[0, 0] == pytest.approx(math.exp(-0.7), abs=1e-9)


def test_transition_with_pure_anchor_term(linear_system):
    op = TransitionOperator(linear_system([[0.0]], [[1.0]]), NUMERICS)
    assert op.transition_z(1.0, 0.0)[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert op.transition_z(2.0, 0.0)[0, 0] == pytest.approx(4.0, abs=1e-12)
    assert op.transition_z(0.0, 2.0)[0, 0] == pytest.approx(0.25, abs=1e-12)
    np.testing.assert_array_equal(op.transition_z(4.2, 4.2), np.eye(1))


def test_transition_diagonal_exponential(linear_system):
    op = TransitionOperator(linear_system(np.diag([-1.0, 1.0]), np.zeros((2, 2))), NUMERICS)
    np.testing.assert_allclose(op.transition_z(3.0, 1.0), np.diag([math.exp(-2), math.exp(2)]),
                               rtol=1e-7, atol=1e-7)


def test_advanced_argument_hand_case(linear_system):
    """z' = z(gamma(t)) with zeta_i = t_i + 0.5: z(0.5) = 1 + 0.5 z(0.5), so z(0.5) = 2, z(1) = 3."""
    system = linear_system([[0.0]], [[1.0]], anchor_fraction=0.5)
    op = TransitionOperator(system, NUMERICS)
    assert op.transition_z(0.5, 0.0)[0, 0] == pytest.approx(2.0, abs=1e-9)
    assert op.transition_z(1.0, 0.0)[0, 0] == pytest.approx(3.0, abs=1e-9)
    traj = solve_ivp(system, 0.0, [1.0], 1.0, NUMERICS)
    assert traj(0.5)[0] == pytest.approx(2.0, abs=1e-9)
    assert traj.final[0] == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("name", ["scalar_decay", "pure_anchor", "rotation"])
def test_cocycle(cocycle_systems, name):
    op = TransitionOperator(cocycle_systems[name], NUMERICS)
    lo, hi = op.grid.t_min, op.grid.t_max
    worst = 0.0
    for t, tau, s in RNG.uniform(lo, hi, (200, 3)):
        composed = op.transition_z(t, tau) @ op.transition_z(tau, s)
        worst = max(worst, _relative_defect(composed, op.transition_z(t, s)))
    assert worst <= 1e-7


@pytest.mark.parametrize("name", ["scalar_decay", "rotation"])
def test_transition_inverse(cocycle_systems, name):
    op = TransitionOperator(cocycle_systems[name], NUMERICS)
    n = op.n
    for t, s in RNG.uniform(op.grid.t_min, op.grid.t_max, (50, 2)):
        product = op.transition_z(t, s) @ op.transition_z(s, t)
        assert opnorm(product - np.eye(n)) <= 1e-7


def test_transition_matches_integration(cocycle_systems):
    system = cocycle_systems["rotation"]
    op = TransitionOperator(system, NUMERICS)
    worst = 0.0
    for _ in range(50):
        tau, t = RNG.uniform(op.grid.t_min, op.grid.t_max, 2)
        xi = RNG.uniform(-2, 2, 2)
        expected = solve_ivp(system, tau, xi, t, NUMERICS).final
        worst = max(worst, np.max(np.abs(op.transition_z(t, tau) @ xi - expected)))
    assert worst <= 1e-6


def test_knot_transitions_agree_with_products(cocycle_systems):
    op = TransitionOperator(cocycle_systems["rotation"], NUMERICS)
    U, V = op.knot_transitions(3.0)
    for r in (0, 5, 11, 20):
        knot = float(op.grid.knots[r])
        np.testing.assert_allclose(U[r], op.transition_z(knot, 3.0), atol=1e-10)
        np.testing.assert_allclose(V[r], op.transition_z(3.0, knot), atol=1e-10)


def test_queries_outside_window(cocycle_systems):
    op = TransitionOperator(cocycle_systems["scalar_decay"], NUMERICS)
    with pytest.raises(WindowError):
        op.transition_z(11.0, 0.0)


def test_z_split(linear_system, dichotomy):
    op = TransitionOperator(linear_system(np.diag([-1.0, 1.0]), np.zeros((2, 2))), NUMERICS)
    np.testing.assert_allclose(op.z_split(2.0, 0.0, dichotomy(np.eye(2))), op.transition_z(2.0, 0.0))
    np.testing.assert_array_equal(op.z_split(2.0, 0.0, dichotomy(np.zeros((2, 2)))), np.zeros((2, 2)))
    np.testing.assert_allclose(op.z_split(2.0, 0.0, dichotomy(np.diag([1.0, 0.0]))),
                               np.diag([math.exp(-2), 0.0]), atol=1e-8)
    # the unstable branch for t < s carries the minus sign
    np.testing.assert_allclose(op.z_split(0.0, 2.0, dichotomy(np.diag([1.0, 0.0]))),
                               np.diag([0.0, -math.exp(-2)]), atol=1e-8)


def test_green_kernel_branches(linear_system, dichotomy):
    op = TransitionOperator(linear_system([[-1.0]], [[0.0]]), NUMERICS)
    d = dichotomy([[1.0]])
    assert op.green(0.7, 0.6, d)[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-9)
    assert op.green(0.5, 0.8, d)[0, 0] == 0.0
    assert op.green(4.5, 2.3, d)[0, 0] == pytest.approx(math.exp(-2.2), abs=1e-8)
    assert op.green2(4.5, 2.3, d)[0, 0] == 0.0


def test_green_kernel_unstable_projection(linear_system, dichotomy):
    """With P = 0 the future source between t and the next knot still feeds z(t)."""
    op = TransitionOperator(linear_system([[1.0]], [[0.0]]), NUMERICS)
    d = dichotomy([[0.0]])
    assert op.green(0.5, 0.7, d)[0, 0] == pytest.approx(-math.exp(-0.2), abs=1e-8)
    assert op.green(0.5, 2.4, d)[0, 0] == pytest.approx(-math.exp(-1.9), abs=1e-8)
    assert op.green(0.5, 0.3, d)[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert op.green1(0.5, 0.3, d)[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert op.green2(0.5, 0.7, d)[0, 0] == pytest.approx(math.exp(-0.2), abs=1e-8)


def test_green_kernel_reproduces_unstable_constant_solution(linear_system, dichotomy):
    """The bounded solution of z' = z + 1 is -1, so int G(t, s) ds = -1."""
    op = TransitionOperator(linear_system([[1.0]], [[0.0]], window=(0.0, 30.0)), NUMERICS)
    d = dichotomy([[0.0]])
    t = 5.5
    nodes, weights = np.polynomial.legendre.leggauss(8)
    breaks = np.sort(np.concatenate([np.arange(0.0, 30.0), [t]]))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        total += half * sum(w * op.green(t, mid + half * x, d)[0, 0] for x, w in zip(nodes, weights))
    assert total == pytest.approx(-1.0, abs=1e-7)


def test_green_kernel_reproduces_constant_solution(linear_system, dichotomy):
    """The bounded solution of z' = -z + 1 is 1, so int G(t, s) ds = 1 deep inside the window."""
    op = TransitionOperator(linear_system([[-1.0]], [[0.0]], window=(0.0, 30.0)), NUMERICS)
    d = dichotomy([[1.0]])
    t = 20.5
    nodes, weights = np.polynomial.legendre.leggauss(8)
    breaks = np.concatenate([np.arange(0.0, 21.0), [t]])
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        total += half * sum(w * op.green(t, mid + half * x, d)[0, 0] for x, w in zip(nodes, weights))
    assert total == pytest.approx(1.0, abs=1e-7)


def test_green_block_local_branch(linear_system):
    x_op = TransitionOperator(linear_system([[-1.0]], [[0.0]]), NUMERICS)
    y_op = TransitionOperator(linear_system([[1.0]], [[0.0]]), NUMERICS)
    blocks = BlockTransition(x_op, y_op, tau=0.0)
    assert blocks.green_block(3.4, 3.1, 1)[0, 0] == pytest.approx(math.exp(-0.3), abs=1e-9)
    np.testing.assert_array_equal(blocks.green_block(2.0, 2.0, 1), np.eye(1))
    np.testing.assert_allclose(blocks.transition(3.0, 1.0), np.diag([math.exp(-2), math.exp(2)]), rtol=1e-7)
    with pytest.raises(ValueError):
        blocks.operator(3)


def test_kernel_reproduces_forced_solution(cocycle_systems):
    """Variation of constants through kernel_from agrees with integrating the forced system."""
    system = cocycle_systems["rotation"]
    op = TransitionOperator(system, NUMERICS)

    def forcing(s):
        return np.array([math.sin(s), 0.5])

    for tau, t in [(1.2, 4.7), (6.3, 2.1), (3.0, 3.4)]:
        xi = np.array([0.3, -1.0])
        expected = solve_forced(system, forcing, tau, xi, t, NUMERICS).final
        np.testing.assert_allclose(linear_response(op, tau, xi, t, forcing), expected, atol=1e-6)
