import json
from pathlib import Path

import numpy as np
import pytest

from config import load_config
from models import DepcagSystem, DichotomySpec, MatrixField, NumericsConfig, TimeGrid

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def config_path():
    """Path of a bundled example config by stem."""
    def path(name: str) -> Path:
        return CONFIGS / f"{name}.json"
    return path


@pytest.fixture
def loaded(config_path):
    def load(name: str, validate: bool = True):
        return load_config(config_path(name), validate=validate)
    return load


@pytest.fixture
def write_config(tmp_path):
    """Dump a config dict to a temporary file and return its path."""
    def write(data: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return write


@pytest.fixture
def numerics():
    return NumericsConfig(ode_step=0.005)


@pytest.fixture
def linear_system():
    """Constant-coefficient linear DEPCAG on a uniform grid."""
    def build(M, M0, step=1.0, window=(0.0, 10.0), anchor_fraction=0.0) -> DepcagSystem:
        grid = TimeGrid.uniform(step, window, anchor_fraction)
        return DepcagSystem(grid, MatrixField.from_matrix(np.atleast_2d(M)),
                            MatrixField.from_matrix(np.atleast_2d(M0)))
    return build


@pytest.fixture
def dichotomy():
    def build(P, K=1.0, alpha=1.0) -> DichotomySpec:
        return DichotomySpec(np.atleast_2d(np.asarray(P, dtype=float)), K, alpha)
    return build
