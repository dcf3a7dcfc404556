"""
Pytest configuration and fixtures for regflow tests.

Provides fixtures for:
- Seeded random generators
- Small linear and nonlinear test problems
- Bundled tableaux
- Config and matrix files written to tmp_path
"""

import textwrap
from pathlib import Path

import numpy as np
import pytest

from regflow.core.flow import InverseProblem
from regflow.core.operators import DenseLinear
from regflow.core.penalty import PenaltySpec
from regflow.resources import get_tableau
from regflow.utils import write_matrix_csv

# =============================================================================
# Pytest Configuration
# =============================================================================


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks long-running property and acceptance runs"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests when --fast is passed."""
    if not config.getoption("--fast", default=False):
        return

    skip_slow = pytest.mark.skip(reason="skipped with --fast")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def pytest_addoption(parser):
    """Add custom command line options."""
    parser.addoption(
        "--fast",
        action="store_true",
        default=False,
        help="skip slow property and acceptance tests",
    )


# =============================================================================
# Numerical Fixtures
# =============================================================================


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test run sees the same instances."""
    return np.random.default_rng(20240601)


@pytest.fixture
def explicit_euler():
    return get_tableau("explicit_euler")


@pytest.fixture
def implicit_euler():
    return get_tableau("implicit_euler")


@pytest.fixture
def heun():
    return get_tableau("heun")


@pytest.fixture
def scalar_problem():
    """F(x) = x on R, quadratic penalty, y_delta = 0."""
    return InverseProblem(DenseLinear([[1.0]]), PenaltySpec(kind="quadratic"), np.array([0.0]))


@pytest.fixture
def make_linear_problem():
    """Factory for quadratic-penalty DenseLinear problems."""

    def _make(matrix, y_delta, delta=0.0, x_hat=None, penalty=None):
        return InverseProblem(
            DenseLinear(matrix),
            penalty or PenaltySpec(kind="quadratic"),
            np.asarray(y_delta, dtype=float),
            delta,
            x_hat=x_hat,
        )

    return _make


# =============================================================================
# Config Fixtures
# =============================================================================


MINIMAL_CONFIG = """
penalty:
  kind: quadratic
operator:
  kind: dense_linear
  matrix: [[1.0, 0.0], [0.0, 1.0]]
flow:
  tableau: explicit_euler
  step_mode: fixed
  dt: 0.1
  max_steps: 200
experiment:
  kind: single
  solution: smooth
"""


@pytest.fixture
def write_config(tmp_path):
    """Write YAML text to tmp_path/config.yaml and return its path."""

    def _write(text: str = MINIMAL_CONFIG, name: str = "config.yaml") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text))
        return path

    return _write


@pytest.fixture
def heun_file(tmp_path) -> Path:
    """Heun's method in the tableau text format."""
    path = tmp_path / "heun.txt"
    path.write_text("2\n0 0\n1 0\n0.5 0.5\n0 1\n")
    return path


@pytest.fixture
def matrix_file(tmp_path):
    """Write a matrix in the CSV input format and return its path."""

    def _write(matrix, name: str = "m.csv", directory: Path | None = None) -> Path:
        path = (directory or tmp_path) / name
        write_matrix_csv(path, np.asarray(matrix, dtype=float))
        return path

    return _write
