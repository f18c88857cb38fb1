import numpy as np
import pytest
from hypothesis import given, strategies as st

from config import config_hash, dump_config, parse_config
from models import (
    BlockSystem, ConditionViolation, ConfigError, DepcagSystem, DichotomySpec,
    NumericsConfig, TimeGrid, opnorm, vnorm,
)

SCALAR = {
    "grid": {"uniform": {"step": 1.0, "window": [0, 10]}},
    "system": {"kind": "depcag", "M": "[[-1]]", "M0": "[[0]]"},
    "dichotomy": {"P": [[1]], "K": 1, "alpha": 1},
}


def test_uniform_grid():
    grid = TimeGrid.uniform(1.0, (0.0, 10.0), 0.0)
    np.testing.assert_array_equal(grid.knots, np.arange(11.0))
    np.testing.assert_array_equal(grid.anchors, np.arange(10.0))
    assert grid.theta == 1.0
    assert grid.n_intervals == 10


def test_uniform_grid_keeps_short_last_interval():
    grid = TimeGrid.uniform(0.4, (0.0, 1.0))
    np.testing.assert_allclose(grid.knots, [0.0, 0.4, 0.8, 1.0])
    assert grid.theta == pytest.approx(0.4)


def test_anchor_past_next_knot_violates_a1():
    knots = np.arange(6.0)
    anchors = knots[:-1].copy()
    anchors[3] = knots[4] + 0.1
    with pytest.raises(ConditionViolation, match="A1 violated at interval 3"):
        TimeGrid(knots, anchors, 1.0)


@pytest.mark.parametrize("knots, anchors, theta, condition", [
    ([0.0], [], 1.0, "A2"),
    ([0.0, 1.0, 2.0], [0.0], 1.0, "A3"),
    ([0.0, 1.0, 1.0, 2.0], [0.0, 1.0, 1.0], 1.0, "A1"),
    ([0.0, 1.0, 3.0], [0.0, 1.0], 1.0, "A4"),
    ([0.0, 1.0], [0.0], 0.0, "A4"),
])
def test_structural_violations(knots, anchors, theta, condition):
    with pytest.raises(ConditionViolation) as err:
        TimeGrid(np.array(knots), np.array(anchors), theta)
    assert err.value.condition == condition


def test_gamma_is_piecewise_constant():
    grid = TimeGrid.uniform(1.0, (0.0, 4.0), 0.5)
    assert grid.gamma(0.0) == 0.5
    assert grid.gamma(0.99) == 0.5
    assert grid.gamma(1.0) == 1.5
    # the right window end belongs to the last interval
    assert grid.gamma(4.0) == 3.5
    np.testing.assert_array_equal(grid.gamma(np.array([0.2, 2.7])), [0.5, 2.5])


@given(st.floats(0.05, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_gamma_stays_in_its_interval(step, fraction, where):
    grid = TimeGrid.uniform(step, (-3.0, 3.0), fraction)
    t = grid.t_min + where * (grid.t_max - grid.t_min)
    i = grid.interval_index(t)
    lo, hi = grid.interval(i)
    assert lo <= t <= hi
    assert lo <= grid.gamma(t) <= hi
    assert abs(grid.gamma(t) - t) <= grid.theta + 1e-12


def test_norms_are_max_based():
    a = np.array([[1.0, -2.0], [0.5, 0.5]])
    assert opnorm(a) == 3.0
    assert vnorm(np.array([1.0, -4.0])) == 4.0


@pytest.mark.parametrize("P, K, alpha", [
    ([[1.0, 1.0], [0.0, 0.0]], 0.5, 1.0),
    ([[0.5, 0.0], [0.0, 1.0]], 1.0, 1.0),
    ([[1.0, 0.0], [0.0, 0.0]], 1.0, 0.0),
])
def test_bad_dichotomy_data(P, K, alpha):
    with pytest.raises(ConditionViolation) as err:
        DichotomySpec(np.array(P), K, alpha)
    assert err.value.condition == "D"


def test_numerics_reject_non_positive_tolerances():
    with pytest.raises(ConfigError):
        NumericsConfig(picard_tol=0.0)
    assert NumericsConfig().with_overrides(seed=7, threads=None).seed == 7


def test_scalar_config_builds_linear_system():
    loaded = parse_config(SCALAR)
    assert isinstance(loaded.system, DepcagSystem)
    assert loaded.system.dim == 1
    assert loaded.system.is_linear
    assert loaded.system.M.at(0.0)[0, 0] == -1.0


def test_config_errors_carry_a_path():
    broken = {**SCALAR, "system": {"kind": "depcag", "M": [["-1 +"]], "M0": [[0]]}}
    with pytest.raises(ConfigError) as err:
        parse_config(broken)
    assert err.value.path == "system.M[0][0]"

    missing = {k: v for k, v in SCALAR.items() if k != "dichotomy"}
    with pytest.raises(ConfigError) as err:
        parse_config(missing)
    assert err.value.path == "dichotomy"


def test_time_dependent_entries():
    data = {**SCALAR, "constants": {"eps": 0.1},
            "system": {"kind": "depcag", "M": [["-1 + eps*sin(t)"]], "M0": [[0]]}}
    system = parse_config(data).system
    assert not system.M.is_constant
    assert system.M.at(np.pi / 2)[0, 0] == pytest.approx(-0.9)


def test_block_config(loaded):
    block = loaded("block_perturbed").system
    assert isinstance(block, BlockSystem)
    assert (block.n1, block.n2) == (1, 1)
    assert block.lam == 0.01
    z = np.array([0.5, -0.25])
    h = block.full_system().h(0.0, z, z)
    np.testing.assert_allclose(h, [0.01 * np.sin(0.5) + 0.01 * np.sin(-0.25)] * 2)
    assert block.intermediate_system().h(0.0, z, z) == pytest.approx([0.01 * np.sin(0.5)] * 2)


@pytest.mark.parametrize("name", ["scalar_decay", "bounded_sine", "depcag_rotation", "block_perturbed"])
def test_dump_reparses_to_equal_structure(loaded, name):
    first = loaded(name)
    dumped = dump_config(first)
    second = parse_config(dumped)
    assert dump_config(second) == dumped
    np.testing.assert_array_equal(first.system.grid.knots, second.system.grid.knots)
    np.testing.assert_array_equal(first.system.grid.anchors, second.system.grid.anchors)
    np.testing.assert_array_equal(first.dichotomy.projection, second.dichotomy.projection)
    assert first.numerics == second.numerics


def test_config_hash_is_stable(config_path):
    path = config_path("scalar_decay")
    assert config_hash(path) == config_hash(path)
    assert len(config_hash(path)) == 64
