"""
Runge-Kutta integration of the dual gradient flow

    d xi/dt = -L(x)* (F(x) - y_delta),    x = grad Theta*(xi),

starting from xi(0) in dTheta(x0). The right-hand side is autonomous, so
the tableau nodes c never enter a step; they are still validated.

Explicit tableaux compute stages in order. Any other tableau solves all
stages jointly by Picard iteration k <- xi_n + dt * A Psi(k); a stage solve
that fails to contract makes the integrator halve dt and retry.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from pydantic import BaseModel, Field

from regflow.core.operators import OperatorSpec
from regflow.core.penalty import PenaltySpec
from regflow.utils import DimensionMismatchError, get_logger

if TYPE_CHECKING:
    from regflow.core.stopping import DiscrepancyRule, StopReport

logger = get_logger("core.flow")

# Order-condition tolerance for tableau classification
ORDER_TOL = 1e-12

# Per-step tolerance on phi increases before a monotonicity event is recorded
MONOTONICITY_TOL = 1e-10

EventKind = Literal[
    "ball_exit_warning",
    "stage_nonconvergence",
    "stopped_by_discrepancy",
    "max_steps_reached",
    "horizon_reached",
    "aborted",
    "recrossing",
    "monotonicity_violation",
]


# =============================================================================
# Errors
# =============================================================================


class TableauError(ValueError):
    """Raised for malformed tableaux or integration with an invalid tableau."""


class StageNonconvergenceError(RuntimeError):
    """Raised when the implicit stage fixed-point iteration fails to contract."""

    def __init__(self, increment: float, iterations: int, dt: float):
        self.increment = increment
        self.iterations = iterations
        self.dt = dt
        super().__init__(
            f"Stage iteration did not converge after {iterations} iteration(s) "
            f"(last increment {increment:.3e}, dt={dt:.3e})"
        )


# =============================================================================
# Butcher tableaux
# =============================================================================


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients (A, b, c) of an s-stage Runge-Kutta method."""

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def from_lists(cls, name: str, A, b, c) -> "ButcherTableau":
        return cls(
            name=name,
            A=np.atleast_2d(np.asarray(A, dtype=float)),
            b=np.atleast_1d(np.asarray(b, dtype=float)),
            c=np.atleast_1d(np.asarray(c, dtype=float)),
        )

    @property
    def s(self) -> int:
        return int(self.b.shape[0])

    @property
    def is_explicit(self) -> bool:
        """Explicit iff A is strictly lower triangular."""
        return bool(np.all(np.triu(self.A) == 0.0))

    @property
    def kind(self) -> str:
        return "explicit" if self.is_explicit else "implicit"


class TableauReport(BaseModel):
    """Result of validating a Butcher tableau."""

    name: str = Field(description="Tableau name")
    stages: int = Field(description="Stage count s")
    consistent: bool = Field(description="Whether sum(b) = 1")
    explicit: bool = Field(description="Whether A is strictly lower triangular")
    row_sum_ok: bool = Field(description="Whether c_i = sum_j a_ij for every row")
    order2_conditions: bool = Field(description="Whether sum(b_i c_i) = 1/2")
    order: int | None = Field(description="Classified order: 1, 2, or None for unknown")
    valid: bool = Field(description="Consistent and row-sum convention satisfied")

    @property
    def order_label(self) -> str:
        return "unknown" if self.order is None else str(self.order)

    @property
    def summary(self) -> str:
        parts = [
            "consistent" if self.consistent else "inconsistent",
            "explicit" if self.explicit else "implicit",
            f"order {self.order_label}",
        ]
        if not self.row_sum_ok:
            parts.append("row-sum convention violated")
        return ", ".join(parts)


def validate_tableau(tab: ButcherTableau) -> TableauReport:
    """
    Check consistency, explicitness, the row-sum convention and classify the order.

    Raises:
        TableauError: If A is not s x s or b, c do not have length s
    """
    s = tab.s
    if tab.A.shape != (s, s) or tab.c.shape != (s,) or tab.b.ndim != 1:
        raise TableauError(
            f"{tab.name}: inconsistent dimensions A{tab.A.shape}, b{tab.b.shape}, c{tab.c.shape}"
        )

    consistent = abs(float(np.sum(tab.b)) - 1.0) <= ORDER_TOL
    row_sum_ok = bool(np.allclose(tab.A.sum(axis=1), tab.c, rtol=0.0, atol=ORDER_TOL))
    order2 = abs(float(tab.b @ tab.c) - 0.5) <= ORDER_TOL
    order3 = (
        abs(float(tab.b @ tab.c**2) - 1.0 / 3.0) <= ORDER_TOL
        and abs(float(tab.b @ tab.A @ tab.c) - 1.0 / 6.0) <= ORDER_TOL
    )

    if not consistent:
        order = None
    elif not order2:
        order = 1
    elif not order3:
        order = 2
    else:
        order = None

    return TableauReport(
        name=tab.name,
        stages=s,
        consistent=consistent,
        explicit=tab.is_explicit,
        row_sum_ok=row_sum_ok,
        order2_conditions=order2,
        order=order,
        valid=consistent and row_sum_ok,
    )


# =============================================================================
# Problem, states and policies
# =============================================================================


def rhs(op: OperatorSpec, pen: PenaltySpec, y_delta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Psi(xi) = -L(x)* (F(x) - y_delta) with x = grad Theta*(xi)."""
    x = pen.conjugate_gradient(xi)
    return -op.deriv_adjoint_apply(x, op.apply(x) - y_delta)


@dataclass(frozen=True)
class DualState:
    """The pair (xi(t), x(t)) with x = grad Theta*(xi)."""

    t: float
    xi: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class InverseProblem:
    """
    F(x) = y from noisy data y_delta with ||y - y_delta|| = delta.

    The penalty is re-expressed in the operator's domain weight so that
    conjugates and Bregman distances use the same inner product as L*.
    """

    operator: OperatorSpec
    penalty: PenaltySpec
    y_delta: np.ndarray
    delta: float = 0.0
    x_hat: np.ndarray | None = None
    x_init: np.ndarray | None = None

    def __post_init__(self):
        op = self.operator
        object.__setattr__(self, "y_delta", op.range.check(self.y_delta, "y_delta"))
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.penalty.weight != op.domain.weight:
            object.__setattr__(self, "penalty", self.penalty.with_weight(op.domain.weight))
        if self.penalty.kind == "tv_quadratic" and self.penalty.grid_n != op.n:
            raise DimensionMismatchError("penalty.grid_n", op.n, self.penalty.grid_n)
        if self.x_hat is not None:
            object.__setattr__(self, "x_hat", op.domain.check(self.x_hat, "x_hat"))
        init = op.x0 if self.x_init is None else op.domain.check(self.x_init, "x_init")
        object.__setattr__(self, "x_init", np.array(init, dtype=float))

    def residual(self, x: np.ndarray) -> float:
        """||F(x) - y_delta|| in the range norm."""
        return self.operator.range.norm(self.operator.apply(x) - self.y_delta)

    def psi(self, xi: np.ndarray) -> np.ndarray:
        return rhs(self.operator, self.penalty, self.y_delta, xi)

    def initial_state(self) -> DualState:
        xi0 = self.penalty.select_subgradient(self.x_init)
        return DualState(t=0.0, xi=xi0, x=self.penalty.conjugate_gradient(xi0))

    def phi(self, state: DualState) -> float | None:
        """Bregman distance from the reference solution, if one is known."""
        if self.x_hat is None:
            return None
        return self.penalty.bregman(self.x_hat, state.x, state.xi)


class StepPolicy(BaseModel):
    """Step-size and stage-solver settings."""

    mode: Literal["fixed", "scaled"] = Field(default="scaled", description="Step mode")
    dt: float = Field(default=0.1, gt=0.0, description="Base step for fixed mode")
    mu: float = Field(default=0.9, gt=0.0, le=1.0, description="Safety factor for scaled mode")
    max_steps: int = Field(default=10_000, ge=0, description="Maximum number of steps")
    stage_tol: float = Field(default=1e-12, gt=0.0, description="Picard stage tolerance")
    stage_max_iter: int = Field(default=200, ge=1, description="Picard iteration cap")
    t_end: float | None = Field(default=None, gt=0.0, description="Optional horizon")
    max_halvings: int = Field(default=10, ge=0, description="Step halvings before abort")

    def step_size(self, c0_bound: float) -> float:
        """Effective base step: dt in fixed mode, mu / C0^2 in scaled mode."""
        if self.mode == "fixed":
            return self.dt
        if c0_bound <= 0:
            raise ValueError("scaled step mode requires a positive C0 bound")
        return self.mu / c0_bound**2


class FlowEvent(BaseModel):
    """A diagnostic event recorded during integration."""

    time: float = Field(description="Flow time of the event")
    kind: EventKind = Field(description="Event kind")
    message: str = Field(default="", description="Details")


@dataclass
class Trajectory:
    """Recorded history of an integration."""

    states: list[DualState] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    phi: list[float | None] = field(default_factory=list)
    theta_values: list[float] = field(default_factory=list)
    events: list[FlowEvent] = field(default_factory=list)
    stop_reason: str = "max_steps_reached"
    stop_report: "StopReport | None" = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final_state(self) -> DualState:
        return self.states[-1]

    @property
    def steps_taken(self) -> int:
        return len(self.states) - 1

    def record(self, problem: InverseProblem, state: DualState, step: float) -> None:
        self.states.append(state)
        self.residuals.append(problem.residual(state.x))
        self.step_sizes.append(step)
        self.phi.append(problem.phi(state))
        self.theta_values.append(problem.penalty.value(state.x))

    def replace_last(self, problem: InverseProblem, state: DualState, step: float) -> None:
        for seq in (self.states, self.residuals, self.step_sizes, self.phi, self.theta_values):
            seq.pop()
        self.record(problem, state, step)

    def add_event(self, time: float, kind: EventKind, message: str = "") -> None:
        self.events.append(FlowEvent(time=time, kind=kind, message=message))

    def event_kinds(self) -> list[str]:
        return [e.kind for e in self.events]


# =============================================================================
# Steps
# =============================================================================


def rk_step(
    tab: ButcherTableau,
    state: DualState,
    dt: float,
    problem: InverseProblem,
    stage_tol: float = 1e-12,
    stage_max_iter: int = 200,
) -> DualState:
    """
    One Runge-Kutta step xi' = xi + dt sum_i b_i Psi(k_i).

    Raises:
        StageNonconvergenceError: If an implicit stage solve does not reach stage_tol
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xi = state.xi
    s = tab.s

    if tab.is_explicit:
        psis: list[np.ndarray] = []
        for i in range(s):
            incr = np.zeros_like(xi)
            for j in range(i):
                if tab.A[i, j] != 0.0:
                    incr = incr + tab.A[i, j] * psis[j]
            psis.append(problem.psi(xi + dt * incr))
    else:
        psis = _solve_stages(tab, xi, dt, problem, stage_tol, stage_max_iter)

    update = np.zeros_like(xi)
    for i in range(s):
        if tab.b[i] != 0.0:
            update = update + tab.b[i] * psis[i]
    xi_new = xi + dt * update
    return DualState(t=state.t + dt, xi=xi_new, x=problem.penalty.conjugate_gradient(xi_new))


def _solve_stages(
    tab: ButcherTableau,
    xi: np.ndarray,
    dt: float,
    problem: InverseProblem,
    stage_tol: float,
    stage_max_iter: int,
) -> list[np.ndarray]:
    """Picard iteration on all stages jointly; returns Psi at the converged stages."""
    space_norm = problem.penalty.norm
    stages = [xi.copy() for _ in range(tab.s)]
    increment = np.inf
    for iteration in range(1, stage_max_iter + 1):
        psis = [problem.psi(k) for k in stages]
        new_stages = [xi + dt * sum(tab.A[i, j] * psis[j] for j in range(tab.s)) for i in range(tab.s)]
        increment = max(space_norm(new - old) for new, old in zip(new_stages, stages))
        stages = new_stages
        if not np.isfinite(increment):
            break
        if increment <= stage_tol:
            logger.debug(f"Stage solve converged in {iteration} iteration(s)")
            return [problem.psi(k) for k in stages]
    raise StageNonconvergenceError(float(increment), stage_max_iter, dt)


def landweber_step(problem: InverseProblem, state: DualState, mu: float) -> DualState:
    """Landweber iteration with penalty: xi' = xi - mu L(x)*(F(x) - y_delta)."""
    op = problem.operator
    x = state.x
    xi_new = state.xi - mu * op.deriv_adjoint_apply(x, op.apply(x) - problem.y_delta)
    return DualState(t=state.t + mu, xi=xi_new, x=problem.penalty.conjugate_gradient(xi_new))


# =============================================================================
# Integrator
# =============================================================================


class FlowIntegrator:
    """
    Integrates one problem with one tableau and step policy.

    Holds no global state; independent integrators can run on separate threads.
    """

    def __init__(self, problem: InverseProblem, tableau: ButcherTableau, policy: StepPolicy):
        report = validate_tableau(tableau)
        if not report.valid:
            raise TableauError(f"{tableau.name}: cannot integrate with tableau ({report.summary})")
        self.problem = problem
        self.tableau = tableau
        self.policy = policy
        self.base_dt = policy.step_size(problem.operator.c0_bound)

    def step(self, state: DualState, dt: float) -> DualState:
        return rk_step(
            self.tableau,
            state,
            dt,
            self.problem,
            stage_tol=self.policy.stage_tol,
            stage_max_iter=self.policy.stage_max_iter,
        )

    def _step_with_halving(
        self, state: DualState, dt: float, traj: Trajectory
    ) -> tuple[DualState, float] | None:
        """Take one step, halving dt on stage nonconvergence. None means abort."""
        attempt = dt
        for halving in range(self.policy.max_halvings + 1):
            try:
                return self.step(state, attempt), attempt
            except StageNonconvergenceError as e:
                traj.add_event(state.t, "stage_nonconvergence", str(e))
                logger.warning(f"t={state.t:.6g}: {e}; halving step")
                attempt /= 2.0
        return None

    def integrate(
        self,
        stop: "DiscrepancyRule | None" = None,
        refine: bool = True,
        refine_tol: float = 1e-3,
    ) -> Trajectory:
        """
        Step until the discrepancy rule fires, the horizon is reached or max_steps.

        On a discrepancy stop the crossing is localized by fractional-step
        bisection and the last recorded state is replaced by the refined one.
        """
        from regflow.core.stopping import StopReport, refine_crossing

        problem = self.problem
        policy = self.policy
        op = problem.operator
        traj = Trajectory()

        state = problem.initial_state()
        traj.record(problem, state, 0.0)
        logger.info(
            f"Integrating with {self.tableau.name}: dt={self.base_dt:.6g}, "
            f"max_steps={policy.max_steps}, initial residual={traj.residuals[0]:.6g}"
        )

        if stop is not None and stop.should_stop(traj.residuals[0]):
            traj.stop_reason = "stopped_by_discrepancy"
            traj.stop_report = StopReport(
                T_star=0.0, residual_at_stop=traj.residuals[0], steps_taken=0, refined=False
            )
            traj.add_event(0.0, "stopped_by_discrepancy", "initial residual already below tau*delta")
            return traj

        threshold = stop.threshold if stop is not None else 0.0
        outside = not op.in_ball(state.x)
        base_dt = self.base_dt

        for _ in range(policy.max_steps):
            dt = base_dt
            if policy.t_end is not None:
                dt = min(dt, policy.t_end - state.t)

            taken = self._step_with_halving(state, dt, traj)
            if taken is None:
                traj.add_event(state.t, "aborted", "repeated stage nonconvergence")
                traj.stop_reason = "aborted"
                logger.error(f"Integration aborted at t={state.t:.6g}")
                return traj
            new_state, used_dt = taken
            if used_dt < dt:
                base_dt = min(base_dt, used_dt)

            prev_state = state
            prev_residual = traj.residuals[-1]
            prev_phi = traj.phi[-1]
            state = new_state
            traj.record(problem, state, used_dt)
            residual = traj.residuals[-1]
            logger.debug(f"t={state.t:.6g} residual={residual:.6g} dt={used_dt:.3g}")

            if not np.isfinite(residual):
                traj.add_event(state.t, "aborted", "non-finite residual")
                traj.stop_reason = "aborted"
                logger.error(f"Non-finite residual at t={state.t:.6g}")
                return traj

            now_outside = not op.in_ball(state.x)
            if now_outside and not outside:
                traj.add_event(state.t, "ball_exit_warning", "iterate left B_2rho(x0)")
                logger.warning(f"t={state.t:.6g}: iterate left the working ball")
            outside = now_outside

            phi_now = traj.phi[-1]
            if (
                prev_phi is not None
                and phi_now is not None
                and prev_residual > threshold
                and phi_now > prev_phi + MONOTONICITY_TOL
            ):
                traj.add_event(
                    state.t, "monotonicity_violation", f"phi rose by {phi_now - prev_phi:.3e}"
                )

            if stop is not None and stop.should_stop(residual):
                if refine:
                    report, refined_state, extra = refine_crossing(
                        self, prev_state, used_dt, stop, refine_tol=refine_tol
                    )
                    for ev in extra:
                        traj.events.append(ev)
                    traj.replace_last(problem, refined_state, refined_state.t - prev_state.t)
                    traj.stop_report = report.model_copy(update={"steps_taken": traj.steps_taken})
                else:
                    traj.stop_report = StopReport(
                        T_star=state.t,
                        residual_at_stop=residual,
                        steps_taken=traj.steps_taken,
                        refined=False,
                    )
                traj.stop_reason = "stopped_by_discrepancy"
                traj.add_event(
                    traj.final_state.t,
                    "stopped_by_discrepancy",
                    f"residual {traj.residuals[-1]:.6g} <= tau*delta {threshold:.6g}",
                )
                logger.info(
                    f"Discrepancy stop at T*={traj.final_state.t:.6g} after {traj.steps_taken} step(s)"
                )
                return traj

            if policy.t_end is not None and state.t >= policy.t_end - 1e-12 * max(1.0, policy.t_end):
                traj.stop_reason = "horizon_reached"
                traj.add_event(state.t, "horizon_reached", f"t_end={policy.t_end}")
                return traj

        traj.stop_reason = "max_steps_reached"
        traj.add_event(state.t, "max_steps_reached", f"max_steps={policy.max_steps}")
        logger.info(f"Reached max_steps={policy.max_steps} at t={state.t:.6g}")
        return traj


def integrate(
    problem: InverseProblem,
    tab: ButcherTableau,
    policy: StepPolicy,
    stop: "DiscrepancyRule | None" = None,
    refine: bool = True,
    refine_tol: float = 1e-3,
) -> Trajectory:
    """Convenience wrapper around FlowIntegrator(problem, tab, policy).integrate(...)."""
    return FlowIntegrator(problem, tab, policy).integrate(stop, refine=refine, refine_tol=refine_tol)
