"""Core numerics: penalties, operators, the dual flow, stopping and experiments."""

from regflow.core.flow import (
    ButcherTableau,
    DualState,
    FlowEvent,
    FlowIntegrator,
    InverseProblem,
    StageNonconvergenceError,
    StepPolicy,
    TableauError,
    TableauReport,
    Trajectory,
    integrate,
    landweber_step,
    rhs,
    rk_step,
    validate_tableau,
)
from regflow.core.operators import (
    OPERATOR_KINDS,
    AutoConvolution,
    DenseLinear,
    DiagonalCubic,
    OperatorSpec,
)
from regflow.core.penalty import BregmanTriple, PenaltySpec
from regflow.core.stopping import (
    DiscrepancyRule,
    StopReport,
    phi,
    refine_crossing,
    residual_square_integral,
    tau_threshold,
)

__all__ = [
    "ButcherTableau",
    "DualState",
    "FlowEvent",
    "FlowIntegrator",
    "InverseProblem",
    "StageNonconvergenceError",
    "StepPolicy",
    "TableauError",
    "TableauReport",
    "Trajectory",
    "integrate",
    "landweber_step",
    "rhs",
    "rk_step",
    "validate_tableau",
    "OPERATOR_KINDS",
    "AutoConvolution",
    "DenseLinear",
    "DiagonalCubic",
    "OperatorSpec",
    "BregmanTriple",
    "PenaltySpec",
    "DiscrepancyRule",
    "StopReport",
    "phi",
    "refine_crossing",
    "residual_square_integral",
    "tau_threshold",
]
