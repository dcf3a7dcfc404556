"""
Discrepancy principle, crossing localization and trajectory diagnostics.

The flow is stopped at the first time T* with ||F(x(T*)) - y_delta|| <= tau*delta.
The discrete trajectory only brackets T*; refine_crossing localizes it inside
the last step by re-taking fractional steps from the state before the crossing.
"""

from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.integrate import trapezoid

from regflow.core.penalty import PenaltySpec
from regflow.utils import get_logger

if TYPE_CHECKING:
    from regflow.core.flow import DualState, FlowEvent, FlowIntegrator, Trajectory

logger = get_logger("core.stopping")

DEFAULT_TAU = 2.5
MAX_BISECTIONS = 40
COARSE_POINTS = 8


def tau_threshold(eta: float) -> float:
    """Smallest admissible tau, (1 + eta) / (1 - eta)."""
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    return (1.0 + eta) / (1.0 - eta)


class DiscrepancyRule(BaseModel):
    """Stop once the residual falls to tau * delta (boundary inclusive)."""

    model_config = ConfigDict(frozen=True)

    tau: float = Field(default=DEFAULT_TAU, description="Discrepancy factor, > 1")
    delta: float = Field(default=0.0, ge=0.0, description="Noise level")

    @field_validator("tau")
    @classmethod
    def _tau_exceeds_one(cls, v: float) -> float:
        if not v > 1.0:
            raise ValueError("tau must exceed 1")
        return v

    @property
    def threshold(self) -> float:
        return self.tau * self.delta

    def should_stop(self, residual: float) -> bool:
        if residual < 0:
            raise ValueError(f"residual must be nonnegative, got {residual}")
        return residual <= self.threshold

    def tau_ok(self, eta: float) -> bool:
        """Whether tau exceeds the tangential-cone threshold; warns if it does not."""
        needed = tau_threshold(eta)
        if self.tau <= needed:
            logger.warning(
                f"tau={self.tau:.4g} does not exceed (1+eta)/(1-eta)={needed:.4g} for eta={eta:.4g}"
            )
            return False
        return True


class StopReport(BaseModel):
    """Where and how the discrepancy stop happened."""

    T_star: float = Field(description="Stopping time")
    residual_at_stop: float = Field(description="Residual at T*")
    steps_taken: int = Field(description="Accepted steps up to and including the stop")
    refined: bool = Field(description="Whether T* was localized by fractional steps")
    alpha: float | None = Field(default=None, description="Fraction of the last step taken")


def refine_crossing(
    integrator: "FlowIntegrator",
    state_before: "DualState",
    dt_last: float,
    rule: DiscrepancyRule,
    refine_tol: float = 1e-3,
) -> tuple[StopReport, "DualState", list["FlowEvent"]]:
    """
    Localize T* inside the last step [t, t + dt_last].

    A coarse scan over fractions k/8 finds the first bracket containing the
    crossing (later re-crossings are returned as events), then bisection on
    the fraction runs until |residual - tau*delta| <= refine_tol * tau*delta
    with the residual at or below tau*delta, or MAX_BISECTIONS is reached.

    Returns:
        (report, refined state, extra events); steps_taken in the report is
        left at 0 for the caller to fill in
    """
    from regflow.core.flow import FlowEvent

    problem = integrator.problem
    target = rule.threshold
    tol = refine_tol * target
    events: list[FlowEvent] = []

    def residual_at(alpha: float) -> tuple["DualState", float]:
        state = integrator.step(state_before, alpha * dt_last)
        return state, problem.residual(state.x)

    def report(state: "DualState", res: float, alpha: float) -> StopReport:
        return StopReport(
            T_star=state.t, residual_at_stop=res, steps_taken=0, refined=True, alpha=alpha
        )

    full_state, full_res = residual_at(1.0)
    if full_res <= target and target - full_res <= tol:
        return report(full_state, full_res, 1.0), full_state, events

    # Coarse scan for the first crossing
    lo, hi = 0.0, 1.0
    hi_state, hi_res = full_state, full_res
    crossed = False
    for k in range(1, COARSE_POINTS + 1):
        alpha = k / COARSE_POINTS
        state, res = (full_state, full_res) if k == COARSE_POINTS else residual_at(alpha)
        if not crossed:
            if res <= target:
                crossed = True
                hi, hi_state, hi_res = alpha, state, res
            else:
                lo = alpha
        elif res > target:
            events.append(
                FlowEvent(
                    time=state.t,
                    kind="recrossing",
                    message=f"residual {res:.6g} rose above tau*delta after the first crossing",
                )
            )
            logger.warning(f"Residual re-crossed tau*delta at t={state.t:.6g}")
            break

    if not crossed:
        # Caller guarantees the full step crosses; keep the full step
        return report(full_state, full_res, 1.0), full_state, events

    for _ in range(MAX_BISECTIONS):
        if target - hi_res <= tol:
            break
        mid = 0.5 * (lo + hi)
        state, res = residual_at(mid)
        if res <= target:
            hi, hi_state, hi_res = mid, state, res
        else:
            lo = mid

    logger.debug(f"Refined crossing at alpha={hi:.6g}, residual={hi_res:.6g}")
    return report(hi_state, hi_res, hi), hi_state, events


def phi(pen: PenaltySpec, x_hat: np.ndarray, state: "DualState") -> float:
    """Bregman distance D_xi(t) Theta(x_hat, x(t))."""
    return pen.bregman(x_hat, state.x, state.xi)


def residual_square_integral(traj: "Trajectory") -> float:
    """Trapezoidal estimate of the integral of ||F(x(t)) - y_delta||^2 over the trajectory."""
    if not traj.states:
        raise ValueError("trajectory is empty")
    residuals = np.asarray(traj.residuals, dtype=float)
    return float(trapezoid(residuals**2, traj.times))
