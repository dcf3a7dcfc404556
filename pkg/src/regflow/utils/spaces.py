"""
Finite-dimensional weighted Hilbert spaces.

Every vector in regflow is a dense 1D float array. Function-space problems
use the Euclidean dot product scaled by the grid spacing, all others use
weight 1. The weight is a scalar so that adjoints, norms and the penalty
conjugates stay closed-form.
"""

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when a vector does not have the dimension its space expects."""

    def __init__(self, name: str, expected: int, got: int):
        self.name = name
        self.expected = expected
        self.got = got
        super().__init__(f"{name}: expected dimension {expected}, got {got}")


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Convert input to a 1D float64 array, rejecting non-finite entries."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected a 1D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite entries")
    return arr


@dataclass(frozen=True)
class WeightedSpace:
    """R^dim with inner product <a, b> = weight * a.b."""

    dim: int
    weight: float = 1.0

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError(f"dimension must be nonnegative, got {self.dim}")
        if not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")

    def check(self, v, name: str = "vector") -> np.ndarray:
        """Validate v as an element of this space and return it as an array."""
        arr = as_vector(v, name)
        if arr.shape[0] != self.dim:
            raise DimensionMismatchError(name, self.dim, arr.shape[0])
        return arr

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.weight * np.dot(a, b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.weight) * np.linalg.norm(a))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)

    def random_direction(self, rng: np.random.Generator) -> np.ndarray:
        """Standard-normal direction normalized to unit norm in this space."""
        u = rng.standard_normal(self.dim)
        return u / self.norm(u)

    def sample_ball(
        self, center: np.ndarray, radius: float, rng: np.random.Generator
    ) -> np.ndarray:
        """Draw a point uniformly from the closed ball B_radius(center)."""
        if self.dim == 0:
            return center.copy()
        r = radius * rng.random() ** (1.0 / self.dim)
        return center + r * self.random_direction(rng)
