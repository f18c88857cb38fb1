import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from models import DepcagSystem, HypothesisError, MatrixField, NumericsConfig
from solve import solve_ivp, solve_span
from transition import TransitionOperator
from verify import (
    HypothesisReport, check_dichotomy, check_green_bound, check_theorem1, check_theorem2,
    continuity_exponent, f_factor, gronwall_check, growth_constants, interval_bounds_entries,
    theorem1_report, theorem2_report, verify_system,
)

E = math.e


# Growth constants

def test_growth_constants_pure_anchor_term(linear_system, dichotomy):
    gc = growth_constants(linear_system([[0.0]], [[-0.5]]), dichotomy([[1.0]]))
    assert gc.rho == 1.0
    assert gc.nu_minus == pytest.approx(0.5)
    assert gc.nu_plus == 0.0
    assert gc.rho0 == pytest.approx(1.5)
    assert gc.condition_c


def test_growth_constants_zero_system(linear_system, dichotomy):
    gc = growth_constants(linear_system([[0.0]], [[0.0]]), dichotomy([[1.0]]))
    assert (gc.rho, gc.nu_plus, gc.nu_minus, gc.rho0) == (1.0, 0.0, 0.0, 1.0)


def test_growth_constants_scalar_decay(linear_system, dichotomy):
    gc = growth_constants(linear_system([[-1.0]], [[0.0]]), dichotomy([[1.0]]))
    np.testing.assert_allclose(gc.rho_plus_i, 1.0)
    np.testing.assert_allclose(gc.rho_minus_i, E)
    assert gc.rho == pytest.approx(E)
    assert gc.rho_star == pytest.approx(E ** 2)
    assert gc.rho_tilde == pytest.approx(E ** 3)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_growth_constants_grow_with_the_coefficient(linear_system, dichotomy, a, b):
    a, b = sorted((a, b))
    small = growth_constants(linear_system([[-a]], [[0.0]]), dichotomy([[1.0]]))
    large = growth_constants(linear_system([[-b]], [[0.0]]), dichotomy([[1.0]]))
    assert small.rho == pytest.approx(math.exp(a), rel=1e-9)
    assert small.rho <= large.rho
    assert small.rho_tilde <= large.rho_tilde


def test_interval_and_green_bounds(loaded):
    for name in ("scalar_decay", "depcag_rotation"):
        cfg = loaded(name)
        linear = cfg.system.linear_part()
        op = TransitionOperator(linear, cfg.numerics)
        growth = growth_constants(linear, cfg.dichotomy, cfg.numerics)
        report = interval_bounds_entries(op, growth, cfg.numerics)
        report.merge(check_green_bound(op, cfg.dichotomy, growth, cfg.numerics))
        assert report.passed, report.failures()


# Dichotomy

def test_dichotomy_calibration(linear_system, dichotomy, numerics):
    system = linear_system(np.diag([-1.0, 1.0]), np.zeros((2, 2)))
    report = check_dichotomy(system, dichotomy(np.diag([1.0, 0.0])), numerics)
    assert report.checks["dichotomy"].passed
    assert report.constants["alpha_fit"] == pytest.approx(1.0, rel=0.05)
    assert report.constants["K_fit"] == pytest.approx(1.0, rel=0.05)


def test_dichotomy_unstable_branch_misconfiguration(linear_system, dichotomy, numerics):
    system = linear_system(np.diag([-1.0, 1.0]), np.zeros((2, 2)))
    report = check_dichotomy(system, dichotomy(np.diag([0.0, 1.0])), numerics)
    assert not report.checks["dichotomy"].passed


@pytest.mark.parametrize("K, alpha", [(1.0, 1.0), (5.0, 0.1), (50.0, 2.0)])
def test_growth_in_stable_branch_fails(linear_system, dichotomy, numerics, K, alpha):
    report = check_dichotomy(linear_system([[1.0]], [[0.0]]), dichotomy([[1.0]], K, alpha), numerics)
    assert not report.passed


def test_dichotomy_fit_for_halving_system(linear_system, dichotomy, numerics):
    report = check_dichotomy(linear_system([[0.0]], [[-0.5]]), dichotomy([[1.0]], 2.0, 0.5), numerics)
    assert report.constants["alpha_fit"] == pytest.approx(math.log(2), rel=0.1)


# Theorem inequalities

def test_theorem1_arithmetic():
    report = theorem1_report(1.0, 1.0, E, E ** 2, r=0.01, mu=0.0, l=0.01)
    assert report.checks["eq10a"].lhs == pytest.approx(8 * 0.01 * E, rel=1e-12)
    assert report.checks["eq10a"].lhs == pytest.approx(0.2174, rel=1e-3)
    assert report.passed


def test_theorem1_degenerate_bound():
    report = theorem1_report(2.0, 0.5, 3.0, 4.0, r=0.0, mu=0.3, l=0.0)
    assert report.passed
    assert report.constants["sigma"] == pytest.approx(2 * 2.0 * 0.3 * 4.0 / 0.5)


def test_theorem1_margin_failure_is_named():
    report = theorem1_report(1.0, 1.0, 1.0, 10.0, r=0.05, mu=0.1, l=0.0)
    assert report.failures() == ["sigma"]
    assert math.isinf(report.constants["sigma"])
    with pytest.raises(HypothesisError, match="sigma violated"):
        report.require("eq10a", "sigma")


def test_theorem1_on_scalar_decay(loaded):
    cfg = loaded("scalar_decay")
    report = check_theorem1(cfg.system, cfg.dichotomy, cfg.numerics)
    assert report.checks["eq10a"].lhs == pytest.approx(0.08 * E ** 2, rel=1e-6)
    assert report.checks["eq10b"].lhs == pytest.approx(0.04 * E ** 2, rel=1e-6)
    assert report.checks["sigma"].lhs == pytest.approx(1 - 0.04 * E ** 3, rel=1e-6)
    assert report.constants["sigma"] == 0.0
    assert report.passed


def test_f_factor_and_upsilon():
    F = f_factor(1.0, 0.01, 1.0)
    assert F == pytest.approx(math.expm1(1.01) / 1.01, rel=1e-12)
    assert F == pytest.approx(1.7280, rel=1e-3)
    cont = continuity_exponent(1.0, 0.0, 0.01, 1.0)
    assert cont["upsilon"] == pytest.approx(0.01 * F, rel=1e-12)
    assert cont["upsilon"] == pytest.approx(0.01728, rel=1e-3)
    assert f_factor(0.0, 0.0, 1.0) == 1.0


def test_upsilon_small_theta():
    cont = continuity_exponent(1.0, 0.5, 0.01, 0.01)
    assert cont["upsilon"] == pytest.approx(0.0051, rel=0.01)
    assert cont["p_l"] > cont["eta1"]


def test_theorem2_without_lipschitz_term():
    report = theorem2_report(1.0, 1.0, 1.0, 5.0, 5.0, lam=0.01, omega=0.0, beta=1.0, beta0=0.0)
    assert report.constants["alpha0"] == 1.0
    assert report.checks["eq11"].lhs == 0.0
    assert report.passed


def test_theorem2_on_perturbed_block(loaded):
    cfg = loaded("block_perturbed")
    report = check_theorem2(cfg.system, cfg.dichotomy, cfg.numerics)
    assert report.passed
    c = report.constants
    rho_tilde = math.exp(1.5)
    assert c["rho_tilde_A"] == pytest.approx(rho_tilde, rel=1e-6)
    assert c["rho_tilde_B"] == pytest.approx(rho_tilde, rel=1e-6)
    assert c["alpha0"] == pytest.approx(1 - 0.02 * rho_tilde * math.exp(0.5), rel=1e-6)
    assert c["theta_bar_decay"] == pytest.approx(0.01 * rho_tilde * math.exp(0.5), rel=1e-6)
    assert report.checks["eq12"].lhs == pytest.approx(0.16 * rho_tilde, rel=1e-6)
    assert c["sigma_bar"] == pytest.approx(0.08 * rho_tilde / (1 - 0.08 * rho_tilde), rel=1e-6)


def test_report_merge_keeps_notes_unique():
    a = HypothesisReport(notes=["x"])
    a.add("one", "1 <= 2", 1, 2, True)
    b = HypothesisReport(notes=["x", "y"])
    b.add("two", "3 <= 2", 3, 2, False)
    a.merge(b)
    assert a.notes == ["x", "y"]
    assert a.failures() == ["two"]
    assert not a.passed


# Gronwall

@pytest.fixture
def decay_trajectories(loaded):
    cfg = loaded("scalar_decay")
    return [solve_ivp(cfg.system, 0.0, [xi], 6.0, cfg.numerics) for xi in (1.0, -2.0, 0.5)]


@pytest.fixture
def drift_trajectories(loaded):
    """|z'| <= 0.1|z| + 0.1|z(gamma)|, so the integral premise holds with eta = 0.2 both ways."""
    cfg = loaded("gronwall_drift")
    return [solve_span(cfg.system, 0.0, xi, -4.0, 6.0, cfg.numerics)
            for xi in ([1.0, 0.0], [-2.0, 0.5], [0.3, 0.3])]


def test_gronwall_constants(decay_trajectories):
    for traj in decay_trajectories:
        report = gronwall_check(traj, "0.2")
        assert report.constants["theta_bar"] == pytest.approx(0.4, abs=1e-10)
        assert report.constants["theta_tilde"] == pytest.approx(8 / 3, abs=1e-10)
        assert report.checks["gronwall_conclusion"].passed


def test_gronwall_conclusions_hold_under_premise(drift_trajectories):
    for traj in drift_trajectories:
        report = gronwall_check(traj, "0.2", both_directions=True)
        assert report.constants["theta_bar"] == pytest.approx(0.4, abs=1e-10)
        assert report.passed, report.failures()


def test_gronwall_zero_rate(decay_trajectories):
    report = gronwall_check(decay_trajectories[0], "0")
    assert report.constants["theta_bar"] == 0.0
    assert report.constants["theta_tilde"] == 2.0
    assert report.checks["gronwall_conclusion"].passed


def test_gronwall_premise_failure(decay_trajectories):
    report = gronwall_check(decay_trajectories[0], "0.6")
    assert report.constants["theta_bar"] == pytest.approx(1.2, abs=1e-10)
    assert report.failures() == ["gronwall_premise"]
    assert "gronwall_conclusion" not in report.checks


def test_gronwall_detects_growth(loaded):
    """z' = z grows like e^t, beyond the exp(theta~ int eta) envelope for eta = 0.1."""
    grid = loaded("scalar_decay").system.grid
    growing = DepcagSystem(grid, MatrixField.from_matrix([[1.0]]), MatrixField.zeros(1))
    traj = solve_ivp(growing, 0.0, [1.0], 5.0, NumericsConfig())
    report = gronwall_check(traj, "0.1")
    assert not report.checks["gronwall_conclusion"].passed


# Whole config

def test_verify_scalar_decay(loaded):
    report = verify_system(loaded("scalar_decay", validate=False))
    assert report.passed, report.failures()
    for name in ("A1", "A2", "A3", "A4", "B1", "B2", "C", "dichotomy", "green_bound", "eq10a", "eq10b"):
        assert name in report.checks


def test_verify_block_system(loaded):
    cfg = loaded("block_perturbed", validate=False)
    report = verify_system(cfg)
    assert report.passed, report.failures()
    for name in ("frakB1", "frakB2", "frakB3", "frakC", "frakD", "eq11", "eq12", "eq13", "eq14",
                 "green_block_bound", "cor1_omega"):
        assert name in report.checks
    assert report.constants["h2_bound_factor"] > 0


def test_verify_is_deterministic_for_a_seed(loaded):
    cfg = loaded("depcag_rotation")
    first = verify_system(cfg)
    second = verify_system(cfg)
    assert {k: v.lhs for k, v in first.checks.items()} == {k: v.lhs for k, v in second.checks.items()}
