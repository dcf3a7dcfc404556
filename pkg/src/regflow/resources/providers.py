"""
Bundled Butcher tableaux and test problems.

Tableaux:
- explicit_euler, implicit_euler            order 1
- heun, midpoint, ralston                   explicit 2-stage, order 2
- implicit_midpoint                         implicit 1-stage, order 2

Problems (each with a constructed reference solution):
- linear_identity            DenseLinear(I_n), x_dagger = ones
- linear_well_conditioned    DenseLinear with singular values in [1, cond]
- diagonal_cubic             x + gamma x^3 around a small x_dagger
- auto_convolution           autoconvolution of a smooth positive profile
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from regflow.core.experiments import (
    ReferenceSolution,
    piecewise_constant_solution,
    smooth_solution,
    sparse_solution,
    well_conditioned_matrix,
)
from regflow.core.flow import ButcherTableau, TableauError
from regflow.core.operators import AutoConvolution, DenseLinear, DiagonalCubic, OperatorSpec
from regflow.utils import WeightedSpace, get_logger, read_tableau_text

logger = get_logger("resources.providers")


# =============================================================================
# Tableaux
# =============================================================================

TABLEAUX: dict[str, ButcherTableau] = {
    "explicit_euler": ButcherTableau.from_lists("explicit_euler", [[0.0]], [1.0], [0.0]),
    "implicit_euler": ButcherTableau.from_lists("implicit_euler", [[1.0]], [1.0], [1.0]),
    "heun": ButcherTableau.from_lists("heun", [[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5], [0.0, 1.0]),
    "midpoint": ButcherTableau.from_lists(
        "midpoint", [[0.0, 0.0], [0.5, 0.0]], [0.0, 1.0], [0.0, 0.5]
    ),
    "ralston": ButcherTableau.from_lists(
        "ralston", [[0.0, 0.0], [2.0 / 3.0, 0.0]], [0.25, 0.75], [0.0, 2.0 / 3.0]
    ),
    "implicit_midpoint": ButcherTableau.from_lists("implicit_midpoint", [[0.5]], [1.0], [0.5]),
}


def list_tableaux() -> list[str]:
    return sorted(TABLEAUX)


def get_tableau(name: str) -> ButcherTableau:
    try:
        return TABLEAUX[name]
    except KeyError:
        raise TableauError(
            f"Unknown tableau '{name}'. Available: {', '.join(list_tableaux())}"
        ) from None


def load_tableau(path: str | Path, name: str | None = None) -> ButcherTableau:
    """Read a tableau file (s, rows of A, b, c) into a ButcherTableau."""
    path = Path(path)
    a, b, c = read_tableau_text(path)
    logger.debug(f"Loaded {len(b)}-stage tableau from {path}")
    return ButcherTableau(name=name or path.stem, A=a, b=b, c=c)


# =============================================================================
# Problems
# =============================================================================


@dataclass(frozen=True)
class BundledProblem:
    """A forward operator together with a known exact solution."""

    name: str
    operator: OperatorSpec
    reference: ReferenceSolution
    description: str

    @property
    def y(self) -> np.ndarray:
        return self.reference.exact_data(self.operator)


ProblemFactory = Callable[..., BundledProblem]
PROBLEMS: dict[str, ProblemFactory] = {}


def problem(name: str) -> Callable[[ProblemFactory], ProblemFactory]:
    """Register a problem factory under `name`."""

    def decorator(factory: ProblemFactory) -> ProblemFactory:
        PROBLEMS[name] = factory
        return factory

    return decorator


def list_problems() -> list[str]:
    return sorted(PROBLEMS)


def get_problem(name: str, **params) -> BundledProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(
            f"Unknown problem '{name}'. Available: {', '.join(list_problems())}"
        ) from None
    return factory(**params)


def make_solution(kind: str, n: int, seed: int = 0, support: int = 3) -> np.ndarray:
    """Reference solution of the given shape: smooth, sparse or piecewise_constant."""
    rng = np.random.default_rng(seed)
    if kind == "smooth":
        return smooth_solution(n)
    if kind == "sparse":
        return sparse_solution(n, support, rng)
    if kind == "piecewise_constant":
        return piecewise_constant_solution(n, support, rng)
    raise ValueError(f"Unknown solution kind '{kind}'")


@problem("linear_identity")
def linear_identity(n: int = 2) -> BundledProblem:
    x_dagger = np.ones(n)
    return BundledProblem(
        name="linear_identity",
        operator=DenseLinear(np.eye(n), rho=float(np.linalg.norm(x_dagger))),
        reference=ReferenceSolution(x_dagger=x_dagger),
        description=f"identity on R^{n}",
    )


@problem("linear_well_conditioned")
def linear_well_conditioned(
    n: int = 20,
    cond: float = 10.0,
    seed: int = 0,
    solution: str = "smooth",
    support: int = 3,
    x_dagger: np.ndarray | None = None,
) -> BundledProblem:
    matrix = well_conditioned_matrix(n, cond, seed)
    source = "loaded" if x_dagger is not None else "constructed"
    if x_dagger is None:
        x_dagger = make_solution(solution, n, seed, support)
    return BundledProblem(
        name="linear_well_conditioned",
        operator=DenseLinear(matrix, rho=max(float(np.linalg.norm(x_dagger)), 1e-12)),
        reference=ReferenceSolution(x_dagger=np.asarray(x_dagger, dtype=float), source=source),
        description=f"{n}x{n} matrix with singular values in [1, {cond:g}]",
    )


@problem("diagonal_cubic")
def diagonal_cubic(
    n: int = 20, gamma: float = 0.1, seed: int = 0, eta: float | None = None
) -> BundledProblem:
    rng = np.random.default_rng(seed)
    x_dagger = rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.2, 0.4, size=n)
    rho = float(np.linalg.norm(x_dagger))
    return BundledProblem(
        name="diagonal_cubic",
        operator=DiagonalCubic(gamma, n, rho=rho, eta=eta),
        reference=ReferenceSolution(x_dagger=x_dagger),
        description=f"x + {gamma:g} x^3 on R^{n}",
    )


@problem("auto_convolution")
def auto_convolution(n: int = 41, level: float = 0.5) -> BundledProblem:
    x_dagger = smooth_solution(n)
    x0 = np.full(n, level)
    rho = WeightedSpace(n, 1.0 / (n - 1)).norm(x_dagger - x0)
    return BundledProblem(
        name="auto_convolution",
        operator=AutoConvolution(n, x0=x0, rho=rho),
        reference=ReferenceSolution(x_dagger=x_dagger),
        description=f"autoconvolution on {n} grid points of [0, 1]",
    )
