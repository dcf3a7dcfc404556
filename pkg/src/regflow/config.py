"""
Run configuration: a YAML file with one section per module.

    penalty:    {kind, beta, grid_n}
    operator:   {kind, n, matrix, matrix_path, cond, seed, gamma, rho, eta, lip, c0_bound, x0}
    flow:       {tableau, custom_tableau_path, step_mode, dt, mu, max_steps,
                 stage_tol, stage_max_iter, t_end}
    stop:       {tau, refine, refine_tol}
    experiment: {kind, delta, deltas, dts, seed, nu, r_f, solution, solution_path,
                 support, horizon, workers, tableaux}
    output:     directory for artifacts
    log_level:  DEBUG | INFO | WARNING | ERROR

Unknown keys are rejected. Overrides `dotted.key=value` are applied after the
file is read; values are parsed as YAML so numbers and lists keep their type.
"""

from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    FilePath,
    ValidationError,
    field_validator,
    model_validator,
)

from regflow.core.experiments import (
    RateStudyConfig,
    quadratic_stability_constant,
    well_conditioned_matrix,
)
from regflow.core.flow import ButcherTableau, StepPolicy
from regflow.core.operators import AutoConvolution, DenseLinear, DiagonalCubic, OperatorSpec
from regflow.core.penalty import PenaltySpec
from regflow.core.stopping import DEFAULT_TAU, DiscrepancyRule
from regflow.resources import get_tableau, load_tableau, make_solution
from regflow.utils import get_logger, read_matrix_csv

logger = get_logger("config")

# Keys holding input files, resolved against the config file's directory
PATH_KEYS = [
    ("operator", "matrix_path"),
    ("flow", "custom_tableau_path"),
    ("experiment", "solution_path"),
]

# Default constant initial guess for autoconvolution (L(0) = 0 would freeze the flow)
AUTOCONV_X0_LEVEL = 0.5


class ConfigError(ValueError):
    """Raised when a configuration file or override is invalid."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("Invalid configuration:\n" + "\n".join(f"  {e}" for e in errors))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PenaltySection(_Section):
    kind: Literal["quadratic", "elastic_net", "tv_quadratic"] = "quadratic"
    beta: float | None = Field(default=None, ge=0.0, description="Required unless quadratic")
    grid_n: int | None = Field(default=None, ge=2, description="TV grid size, defaults to operator size")

    @model_validator(mode="after")
    def _beta_for_nonsmooth(self) -> "PenaltySection":
        if self.kind != "quadratic" and self.beta is None:
            raise ValueError("beta is required for elastic_net/tv_quadratic")
        return self


class OperatorSection(_Section):
    kind: Literal["dense_linear", "diagonal_cubic", "auto_convolution"] = "dense_linear"
    n: int = Field(default=20, ge=1, description="Dimension / grid size")
    matrix: list[list[float]] | None = None
    matrix_path: FilePath | None = None
    cond: float = Field(default=10.0, ge=1.0)
    seed: int = 0
    gamma: float = Field(default=0.1, ge=0.0)
    rho: float | None = Field(default=None, gt=0.0)
    eta: float | None = Field(default=None, ge=0.0, lt=1.0)
    lip: float | None = Field(default=None, ge=0.0)
    c0_bound: float | None = Field(default=None, gt=0.0)
    x0: list[float] | None = None

    @model_validator(mode="after")
    def _one_matrix_source(self) -> "OperatorSection":
        if self.matrix is not None and self.matrix_path is not None:
            raise ValueError("give either matrix or matrix_path, not both")
        if self.kind == "auto_convolution" and self.n < 2:
            raise ValueError("auto_convolution needs n >= 2")
        return self


class FlowSection(_Section):
    tableau: Literal[
        "explicit_euler",
        "implicit_euler",
        "heun",
        "midpoint",
        "ralston",
        "implicit_midpoint",
        "custom",
    ] = "explicit_euler"
    custom_tableau_path: FilePath | None = None
    step_mode: Literal["fixed", "scaled"] = "scaled"
    dt: float = Field(default=0.1, gt=0.0)
    mu: float = Field(default=0.9, gt=0.0, le=1.0)
    max_steps: int = Field(default=10_000, ge=0)
    stage_tol: float = Field(default=1e-12, gt=0.0)
    stage_max_iter: int = Field(default=200, ge=1)
    t_end: float | None = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def _custom_needs_path(self) -> "FlowSection":
        if self.tableau == "custom" and self.custom_tableau_path is None:
            raise ValueError("tableau 'custom' requires custom_tableau_path")
        return self


class StopSection(_Section):
    tau: float = DEFAULT_TAU
    refine: bool = True
    refine_tol: float = Field(default=1e-3, gt=0.0, lt=1.0)

    @field_validator("tau")
    @classmethod
    def _tau_exceeds_one(cls, v: float) -> float:
        if not v > 1.0:
            raise ValueError("tau must exceed 1")
        return v


class ExperimentSection(_Section):
    kind: Literal["single", "rate_sweep", "order_study", "sparse_demo"] = "single"
    delta: float = Field(default=0.0, ge=0.0)
    deltas: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    dts: list[float] = Field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    tableaux: list[str] = Field(
        default_factory=lambda: ["explicit_euler", "heun", "implicit_euler"]
    )
    seed: int = 0
    nu: float = Field(default=2.0, ge=1.0, le=2.0)
    r_f: float | None = Field(default=None, gt=0.0)
    solution: Literal["smooth", "sparse", "piecewise_constant", "file"] = "smooth"
    solution_path: FilePath | None = None
    support: int = Field(default=3, ge=0)
    horizon: float = Field(default=5.0, gt=0.0)
    workers: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _file_needs_path(self) -> "ExperimentSection":
        if self.solution == "file" and self.solution_path is None:
            raise ValueError("solution 'file' requires solution_path")
        return self


class RunConfig(_Section):
    """Validated configuration of one regflow run."""

    penalty: PenaltySection = Field(default_factory=PenaltySection)
    operator: OperatorSection = Field(default_factory=OperatorSection)
    flow: FlowSection = Field(default_factory=FlowSection)
    stop: StopSection = Field(default_factory=StopSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: Path = Path("regflow-out")
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @model_validator(mode="after")
    def _sparse_demo_beta(self) -> "RunConfig":
        if self.experiment.kind == "sparse_demo" and self.penalty.beta is None:
            raise ValueError("penalty.beta is required for sparse_demo")
        return self

    # -------------------------------------------------------------------------
    # Builders
    # -------------------------------------------------------------------------

    def _matrix(self) -> np.ndarray:
        op = self.operator
        if op.matrix is not None:
            return np.array(op.matrix, dtype=float)
        if op.matrix_path is not None:
            return read_matrix_csv(op.matrix_path)
        return well_conditioned_matrix(op.n, op.cond, op.seed)

    def domain_dim(self) -> int:
        if self.operator.kind == "dense_linear":
            return int(self._matrix().shape[1])
        return self.operator.n

    def _x0(self, n: int) -> np.ndarray | None:
        if self.operator.x0 is not None:
            return np.array(self.operator.x0, dtype=float)
        if self.operator.kind == "auto_convolution":
            return np.full(n, AUTOCONV_X0_LEVEL)
        return None

    def reference_solution(self) -> np.ndarray:
        exp = self.experiment
        if exp.solution == "file":
            return read_matrix_csv(exp.solution_path).ravel()
        return make_solution(exp.solution, self.domain_dim(), exp.seed, exp.support)

    def build_operator(self, x_dagger: np.ndarray | None = None) -> OperatorSpec:
        """Operator with rho defaulting to ||x_dagger - x0|| when a reference is known."""
        op = self.operator
        n = self.domain_dim()
        x0 = self._x0(n)
        rho = op.rho
        if rho is None and x_dagger is not None:
            base = np.zeros(n) if x0 is None else x0
            weight = 1.0 / (n - 1) if op.kind == "auto_convolution" else 1.0
            rho = float(np.sqrt(weight) * np.linalg.norm(np.asarray(x_dagger) - base)) or 1.0
        meta: dict[str, Any] = {"rho": rho or 1.0, "x0": x0, "c0_bound": op.c0_bound}
        if op.eta is not None:
            meta["eta"] = op.eta
        if op.lip is not None:
            meta["lip"] = op.lip

        if op.kind == "dense_linear":
            return DenseLinear(self._matrix(), **meta)
        if op.kind == "diagonal_cubic":
            return DiagonalCubic(op.gamma, n, **meta)
        return AutoConvolution(n, **meta)

    def penalty_spec(self, n: int) -> PenaltySpec:
        pen = self.penalty
        grid_n = (pen.grid_n or n) if pen.kind == "tv_quadratic" else None
        beta = 0.0 if pen.beta is None else pen.beta
        return PenaltySpec(kind=pen.kind, beta=beta, grid_n=grid_n)

    def tableau(self) -> ButcherTableau:
        if self.flow.tableau == "custom":
            return load_tableau(self.flow.custom_tableau_path)
        return get_tableau(self.flow.tableau)

    def step_policy(self) -> StepPolicy:
        f = self.flow
        return StepPolicy(
            mode=f.step_mode,
            dt=f.dt,
            mu=f.mu,
            max_steps=f.max_steps,
            stage_tol=f.stage_tol,
            stage_max_iter=f.stage_max_iter,
            t_end=f.t_end,
        )

    def rule(self, delta: float | None = None) -> DiscrepancyRule:
        return DiscrepancyRule(
            tau=self.stop.tau, delta=self.experiment.delta if delta is None else delta
        )

    def rate_config(self, operator: OperatorSpec) -> RateStudyConfig:
        """Rate-sweep settings; R_F defaults to ||M^-1||^2 / 2 for linear quadratic problems."""
        exp = self.experiment
        r_f = exp.r_f
        if r_f is None and isinstance(operator, DenseLinear) and self.penalty.kind == "quadratic":
            if operator.matrix.shape[0] == operator.matrix.shape[1]:
                r_f = quadratic_stability_constant(operator.matrix)
        return RateStudyConfig(
            deltas=exp.deltas,
            nu=exp.nu,
            r_f=r_f,
            seed=exp.seed,
            tau=self.stop.tau,
            workers=exp.workers,
        )


# =============================================================================
# Parsing
# =============================================================================


def _set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        elif not isinstance(child, dict):
            raise ConfigError([f"{key}: '{part}' is not a section"])
        node = child
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """Split `dotted.key=value` and parse the value as a YAML scalar or list."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError([f"{item}: overrides must look like dotted.key=value"])
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError([f"{key}: cannot parse value '{raw}': {e}"]) from e
    return key, value


def _format_errors(e: ValidationError) -> list[str]:
    lines = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        lines.append(f"{loc}: {err['msg']}")
    return lines


def parse_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """
    Read, override and validate a run configuration.

    Raises:
        ConfigError: Missing file, unknown key, type mismatch or constraint violation
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config: file not found: {path}"])
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError([f"config: invalid YAML: {e}"]) from e
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be a mapping of sections"])

    for item in overrides or []:
        key, value = parse_override(item)
        _set_dotted(data, key, value)

    # Relative input paths, overridden ones included, are taken from the config directory
    base = path.resolve().parent
    for section, key in PATH_KEYS:
        node = data.get(section)
        if isinstance(node, dict) and node.get(key) is not None:
            p = Path(str(node[key]))
            if not p.is_absolute():
                node[key] = str(base / p)

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from e

    logger.debug(f"Parsed config {path} with {len(overrides or [])} override(s)")
    return config
