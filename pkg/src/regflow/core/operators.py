"""
Forward operators F with derivative family L(x) and adjoint.

Implemented operators:
- DenseLinear      F(x) = M x                    (eta = 0, L' = 0)
- DiagonalCubic    F(x)_i = x_i + gamma x_i^3    (self-adjoint derivative)
- AutoConvolution  F(x)(s) = int_0^s x(s-t) x(t) dt on a uniform grid of [0, 1]

Each operator carries the metadata the analysis needs: a bound C0 on ||L(x)||
over the working ball B_{2 rho}(x0), the tangential-cone constant eta
(declared or estimated by sampling), an optional Lipschitz constant L' of
x -> L(x), and the ball itself. Ball membership is reported, never enforced.
"""

from abc import ABC, abstractmethod

import numpy as np

from regflow.utils import WeightedSpace, get_logger

logger = get_logger("core.operators")


# =============================================================================
# Base class
# =============================================================================


class OperatorSpec(ABC):
    """
    Forward operator contract.

    Subclasses implement the raw maps (_apply, _deriv, _deriv_transpose);
    the public methods validate dimensions and apply the weighted adjoint.
    """

    kind: str = "abstract"

    def __init__(
        self,
        domain: WeightedSpace,
        range_space: WeightedSpace,
        *,
        c0_bound: float | None = None,
        eta: float | None = None,
        lip: float | None = None,
        rho: float = 1.0,
        x0=None,
    ):
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        if eta is not None and not 0.0 <= eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        self.domain = domain
        self.range = range_space
        self.rho = float(rho)
        self.x0 = domain.zeros() if x0 is None else domain.check(x0, "x0").copy()
        self.x0.setflags(write=False)
        self.eta = eta
        self.lip = lip
        self.c0_bound = float(c0_bound) if c0_bound is not None else self.default_c0_bound()

    @property
    def n(self) -> int:
        return self.domain.dim

    @property
    def m(self) -> int:
        return self.range.dim

    @property
    def is_linear(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, m={self.m}, c0_bound={self.c0_bound:.4g})"

    # -------------------------------------------------------------------------
    # Subclass hooks
    # -------------------------------------------------------------------------

    @abstractmethod
    def _apply(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _deriv(self, x: np.ndarray, h: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _deriv_transpose(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Euclidean transpose of the derivative, L(x)^T g."""

    @abstractmethod
    def default_c0_bound(self) -> float:
        """A bound on ||L(x)|| valid on B_{2 rho}(x0)."""

    # -------------------------------------------------------------------------
    # Operations
    # -------------------------------------------------------------------------

    def apply(self, x) -> np.ndarray:
        """F(x)."""
        return self._apply(self.domain.check(x, "x"))

    def deriv_apply(self, x, h) -> np.ndarray:
        """L(x) h."""
        return self._deriv(self.domain.check(x, "x"), self.domain.check(h, "h"))

    def deriv_adjoint_apply(self, x, g) -> np.ndarray:
        """L(x)* g, adjoint in the weighted inner products of domain and range."""
        x = self.domain.check(x, "x")
        g = self.range.check(g, "g")
        return (self.range.weight / self.domain.weight) * self._deriv_transpose(x, g)

    def in_ball(self, x: np.ndarray, factor: float = 2.0) -> bool:
        """Whether x lies in the closed ball B_{factor * rho}(x0)."""
        return self.domain.norm(x - self.x0) <= factor * self.rho

    def tangential_residual(self, x: np.ndarray, x_bar: np.ndarray) -> tuple[float, float]:
        """
        Returns (||F(x) - F(x_bar) - L(x_bar)(x - x_bar)||, ||F(x) - F(x_bar)||).
        """
        fx = self.apply(x)
        fxb = self.apply(x_bar)
        diff = fx - fxb
        lin = diff - self.deriv_apply(x_bar, x - x_bar)
        return self.range.norm(lin), self.range.norm(diff)

    def estimate_eta(self, samples: int, seed: int) -> float:
        """
        Empirical tangential-cone constant over sampled pairs in B_{2 rho}(x0).

        A lower bound for the true eta. Pairs with F(x) = F(x_bar) are skipped.
        """
        if samples < 1:
            raise ValueError(f"samples must be >= 1, got {samples}")
        if self.is_linear:
            return 0.0

        rng = np.random.default_rng(seed)
        worst = 0.0
        skipped = 0
        for _ in range(samples):
            x = self.domain.sample_ball(self.x0, 2.0 * self.rho, rng)
            x_bar = self.domain.sample_ball(self.x0, 2.0 * self.rho, rng)
            num, den = self.tangential_residual(x, x_bar)
            if den == 0.0:
                skipped += 1
                continue
            worst = max(worst, num / den)

        if skipped:
            logger.debug(f"estimate_eta skipped {skipped} degenerate pair(s)")
        logger.info(f"{self.kind}: estimated eta = {worst:.6g} from {samples} sample(s)")
        return worst

    def estimate_norm(self, x, iters: int = 100, seed: int = 0) -> float:
        """||L(x)|| by power iteration on L(x)* L(x); converges from below."""
        x = self.domain.check(x, "x")
        if self.n == 0:
            return 0.0
        rng = np.random.default_rng(seed)
        v = self.domain.random_direction(rng)
        estimate = 0.0
        for _ in range(iters):
            w = self.deriv_adjoint_apply(x, self.deriv_apply(x, v))
            norm_w = self.domain.norm(w)
            if norm_w == 0.0:
                return 0.0
            v = w / norm_w
            estimate = self.range.norm(self.deriv_apply(x, v))
        return estimate

    def effective_eta(self, samples: int = 200, seed: int = 0) -> float:
        """Declared eta if available, otherwise the sampled estimate."""
        if self.eta is not None:
            return self.eta
        return self.estimate_eta(samples, seed)


# =============================================================================
# Concrete operators
# =============================================================================


class DenseLinear(OperatorSpec):
    """F(x) = M x with Euclidean inner products."""

    kind = "dense_linear"

    def __init__(self, matrix, **meta):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2D, got shape {matrix.shape}")
        matrix.setflags(write=False)
        self.matrix = matrix
        meta.setdefault("eta", 0.0)
        meta.setdefault("lip", 0.0)
        super().__init__(
            WeightedSpace(matrix.shape[1]), WeightedSpace(matrix.shape[0]), **meta
        )

    @property
    def is_linear(self) -> bool:
        return True

    def _apply(self, x):
        return self.matrix @ x

    def _deriv(self, x, h):
        return self.matrix @ h

    def _deriv_transpose(self, x, g):
        return self.matrix.T @ g

    def default_c0_bound(self) -> float:
        if self.matrix.size == 0:
            return 0.0
        return float(np.linalg.norm(self.matrix, 2))


class DiagonalCubic(OperatorSpec):
    """F(x)_i = x_i + gamma x_i^3 with L(x) = diag(1 + 3 gamma x_i^2)."""

    kind = "diagonal_cubic"

    def __init__(self, gamma: float, n: int, **meta):
        if gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {gamma}")
        self.gamma = float(gamma)
        if self.gamma == 0.0:
            meta.setdefault("eta", 0.0)
        space = WeightedSpace(n)
        super().__init__(space, space, **meta)
        if self.lip is None:
            # ||L(x) - L(x_bar)|| = 3 gamma max |x_i^2 - x_bar_i^2| <= 6 gamma R ||x - x_bar||
            self.lip = 6.0 * self.gamma * self._reach()

    def _reach(self) -> float:
        return float(np.max(np.abs(self.x0), initial=0.0)) + 2.0 * self.rho

    def _apply(self, x):
        return x + self.gamma * x**3

    def _deriv(self, x, h):
        return (1.0 + 3.0 * self.gamma * x**2) * h

    def _deriv_transpose(self, x, g):
        return (1.0 + 3.0 * self.gamma * x**2) * g

    def default_c0_bound(self) -> float:
        return 1.0 + 3.0 * self.gamma * self._reach() ** 2


class AutoConvolution(OperatorSpec):
    """
    Autoconvolution on [0, 1] sampled at s_j = j h, h = 1/(n-1).

    Trapezoidal quadrature gives F_j = h (sum_{k<=j} x_{j-k} x_k - x_0 x_j),
    and both domain and range carry the grid weight h.
    """

    kind = "auto_convolution"

    def __init__(self, n: int, **meta):
        if n < 2:
            raise ValueError(f"auto_convolution needs n >= 2 grid points, got {n}")
        self.h = 1.0 / (n - 1)
        space = WeightedSpace(n, self.h)
        super().__init__(space, space, **meta)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def _causal_conv(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.convolve(a, b)[: self.n]

    def _apply(self, x):
        return self.h * (self._causal_conv(x, x) - x[0] * x)

    def _deriv(self, x, h):
        return self.h * (2.0 * self._causal_conv(x, h) - x[0] * h - h[0] * x)

    def _deriv_transpose(self, x, g):
        # Transpose of the lower-triangular Toeplitz map h -> conv(x, h)[:n]
        corr = np.convolve(g[::-1], x)[: self.n][::-1]
        out = 2.0 * corr - x[0] * g
        out[0] -= float(np.dot(x, g))
        return self.h * out

    def default_c0_bound(self) -> float:
        # ||L(x)|| <= h (2 ||x||_1 + |x_0| + ||x||_2) <= h (2 sqrt(n) + 2) ||x||_2
        radius = float(np.linalg.norm(self.x0)) + 2.0 * self.rho / np.sqrt(self.h)
        return self.h * (2.0 * np.sqrt(self.n) + 2.0) * radius


OPERATOR_KINDS = {
    DenseLinear.kind: DenseLinear,
    DiagonalCubic.kind: DiagonalCubic,
    AutoConvolution.kind: AutoConvolution,
}
