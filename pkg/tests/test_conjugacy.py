"""
Crossing times and the topological conjugacy between the block system and
its linear part.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from config import load_config
from conjugacy import (
    CROSSING_SHIFTS, TOWARD_LINEAR, TOWARD_NONLINEAR, ConjugacyMap, Linearization, conjugacy_report,
    dynamics_defect, state_grid,
)
from models import DepcagError, vnorm
from solve import solve_ivp

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
STATES = [np.array([0.5, -0.3]), np.array([2.0, 1.0]), np.array([-1.5, 0.0])]
FLOW_STARTS = STATES + [np.array([-1.0, 2.5]), np.array([3.0, -3.0])]


@pytest.fixture(scope="module")
def linear_engine():
    cfg = load_config(CONFIGS / "block_linear.json")
    return Linearization(cfg.system, cfg.dichotomy, cfg.numerics)


@pytest.fixture(scope="module")
def perturbed_engine():
    cfg = load_config(CONFIGS / "block_perturbed.json")
    return Linearization(cfg.system, cfg.dichotomy, cfg.numerics)


# Crossing times

def test_crossing_time_of_linear_decay(linear_engine):
    assert linear_engine.crossing_time_T(0.0, [math.e]).value == pytest.approx(1.0, abs=1e-6)
    assert linear_engine.crossing_time_S(0.0, [math.e]).value == pytest.approx(1.0, abs=1e-6)
    # inside the unit ball the crossing lies in the past
    assert linear_engine.crossing_time_S(2.0, [math.exp(-1.5)]).value == pytest.approx(0.5, abs=1e-6)


def test_crossing_time_on_the_sphere(linear_engine):
    crossing = linear_engine.crossing_time_T(3.0, [-1.0])
    assert crossing.value == 3.0
    assert crossing.residual == 0.0


def test_crossing_time_is_monotone_in_size(linear_engine):
    near = linear_engine.crossing_time_S(0.0, [1e-2]).value
    nearer = linear_engine.crossing_time_S(0.0, [1e-4]).value
    assert nearer < near < 0.0
    assert nearer == pytest.approx(math.log(1e-4), abs=1e-6)


def test_crossing_time_undefined_at_origin(linear_engine):
    with pytest.raises(DepcagError, match="origin"):
        linear_engine.crossing_time_T(0.0, [0.0])


@pytest.mark.slow
def test_crossing_time_is_constant_along_solutions(perturbed_engine):
    x0 = np.array([2.0])
    base = perturbed_engine.crossing_time_T(0.0, x0)
    assert base.residual <= 1e-8
    for t in CROSSING_SHIFTS:
        xt = solve_ivp(perturbed_engine.x_system, 0.0, x0, t, perturbed_engine.numerics).final
        assert perturbed_engine.crossing_time_T(t, xt).value == pytest.approx(base.value, abs=1e-6)


@pytest.mark.slow
def test_crossing_duality(perturbed_engine):
    for x0 in ([2.0], [0.4], [-3.0]):
        T = perturbed_engine.crossing_time_T(0.0, x0).value
        S = perturbed_engine.crossing_time_S(0.0, perturbed_engine.H1(0.0, x0)).value
        assert S == pytest.approx(T, abs=1e-5)


# Unperturbed block

def test_linear_block_maps_are_identity(linear_engine):
    for stage in ("6", "7", "all"):
        for direction in (TOWARD_LINEAR, TOWARD_NONLINEAR):
            mapping = linear_engine.conjugacy_map(stage, direction)
            for z in STATES:
                np.testing.assert_allclose(mapping(0.0, z), z, atol=1e-8)


def test_maps_fix_the_origin(linear_engine):
    np.testing.assert_array_equal(linear_engine.H1(0.0, [0.0]), [0.0])
    np.testing.assert_array_equal(linear_engine.L1(0.0, [0.0]), [0.0])
    np.testing.assert_array_equal(linear_engine.forward_response(0.0, [0.0]), [0.0])


def test_map_arguments_are_validated(linear_engine):
    with pytest.raises(ValueError):
        ConjugacyMap(linear_engine, "sideways")
    with pytest.raises(ValueError):
        ConjugacyMap(linear_engine, TOWARD_LINEAR, "5")
    with pytest.raises(ValueError):
        linear_engine.conjugacy_composed(0.0, STATES[0], "sideways")
    with pytest.raises(DepcagError, match="components"):
        linear_engine.map_H(0.0, [1.0])


def test_state_grid():
    points = state_grid(2, 3, radius=2.0)
    assert len(points) == 9
    assert any(np.array_equal(p, [0.0, 0.0]) for p in points)
    assert max(vnorm(p) for p in points) == 2.0


# Perturbed block

@pytest.mark.slow
@pytest.mark.parametrize("stage, tol", [("6", 1e-4), ("7", 1e-4), ("all", 1e-3)])
def test_round_trips(perturbed_engine, stage, tol):
    mapping = perturbed_engine.conjugacy_map(stage, TOWARD_LINEAR)
    for z in state_grid(2, 5, radius=3.0):
        assert mapping.round_trip(0.0, z) <= tol
        assert mapping.inverse.round_trip(0.0, z) <= tol


@pytest.mark.slow
def test_displacement_bounds(perturbed_engine):
    engine = perturbed_engine
    for z in STATES:
        assert vnorm(engine.map_Htilde(0.0, z) - z) <= engine.sigma_bar
        assert vnorm(engine.map_Ltilde(0.0, z) - z) <= engine.sigma_bar
        x = z[:1]
        assert vnorm(engine.forward_response(0.0, x)) <= engine.h2_factor * vnorm(x)


@pytest.mark.slow
def test_stage_six_maps_solutions_to_solutions(perturbed_engine):
    engine = perturbed_engine
    numerics = engine.numerics
    z0 = STATES[1]
    source, target = engine.stage_systems("6")
    z = solve_ivp(source, 0.0, z0, 3.0, numerics)
    w = solve_ivp(target, 0.0, engine.map_H(0.0, z0), 3.0, numerics)
    for t in (1.0, 2.0, 3.0):
        assert vnorm(engine.map_H(t, z(t)) - w(t)) <= numerics.stage_tol


@pytest.mark.slow
@pytest.mark.parametrize("direction", [TOWARD_LINEAR, TOWARD_NONLINEAR])
def test_composed_map_carries_solutions_over_five_units(perturbed_engine, direction):
    mapping = perturbed_engine.conjugacy_map("all", direction)
    times = np.linspace(0.0, 5.0, 11)[1:]
    for z in FLOW_STARTS:
        assert dynamics_defect(perturbed_engine, mapping, 0.0, z, times) <= perturbed_engine.numerics.composed_tol


@pytest.mark.slow
def test_decay_along_nonlinear_x_flow(perturbed_engine):
    report = perturbed_engine.decay_check(0.0, [2.0], 5.0)
    assert report.passed, report.failures()
    assert report.constants["alpha0"] == pytest.approx(1 - 0.02 * math.exp(2.0), rel=1e-6)


@pytest.mark.slow
def test_conjugacy_report_on_small_grid():
    cfg = load_config(CONFIGS / "block_perturbed.json")
    report = conjugacy_report(cfg.system, cfg.dichotomy, cfg.numerics, grid_points=2)
    for name in ("roundtrip_6", "roundtrip_7", "roundtrip_all", "dynamics_all", "displacement_tilde",
                 "displacement_H2", "crossing_invariance", "crossing_duality", "continuity_H1",
                 "continuity_L1", "decay", "decay_frozen", "properness"):
        assert name in report.checks
    assert report.passed, report.failures()
    # the 2x2 grid has four nonzero states, all of them carried along the flow
    assert report.checks["dynamics_all"].note.startswith("4 solutions")
    assert report.checks["displacement_tilde"].lhs <= report.checks["displacement_tilde"].rhs
