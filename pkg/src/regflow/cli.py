"""
regflow command line.

    regflow run <config>               run the experiment named by experiment.kind
    regflow sweep <config>             noise-level rate sweep
    regflow order <config>             Runge-Kutta order study
    regflow validate-tableau <path>    validate a tableau file

Exit codes: 0 clean stop, 1 usage or config error, 2 max_steps without a
discrepancy stop, 3 aborted integration.
"""

import argparse
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from regflow import __version__
from regflow.config import ConfigError, RunConfig, parse_config
from regflow.core.experiments import (
    ORDER_HEADER,
    RATE_HEADER,
    ReferenceSolution,
    make_noisy,
    run_order_study,
    run_rate_study,
    sparse_recovery_demo,
)
from regflow.core.flow import InverseProblem, TableauError, Trajectory, integrate, validate_tableau
from regflow.resources import get_tableau, load_tableau
from regflow.utils import FileFormatError, get_logger, setup_logging, write_csv, write_json

logger = get_logger("cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAX_STEPS = 2
EXIT_ABORTED = 3

TRAJECTORY_HEADER = ["t", "residual", "phi", "theta_value", "step_size"]
RECOVERY_HEADER = ["penalty", "precision", "recall", "tv", "bregman_error", "stop_reason", "steps"]

_EXIT_BY_REASON = {
    "stopped_by_discrepancy": EXIT_OK,
    "horizon_reached": EXIT_OK,
    "max_steps_reached": EXIT_MAX_STEPS,
    "aborted": EXIT_ABORTED,
}


def exit_code(stop_reason: str) -> int:
    return _EXIT_BY_REASON[stop_reason]


# =============================================================================
# Commands
# =============================================================================


def trajectory_rows(traj: Trajectory) -> list[list]:
    return [
        [s.t, r, p, th, dt]
        for s, r, p, th, dt in zip(
            traj.states, traj.residuals, traj.phi, traj.theta_values, traj.step_sizes
        )
    ]


def run_single(cfg: RunConfig) -> int:
    """One noisy (or noise-free) solve; writes trajectory.csv and summary.json."""
    x_dagger = cfg.reference_solution()
    op = cfg.build_operator(x_dagger)
    penalty = cfg.penalty_spec(op.n)
    delta = cfg.experiment.delta
    data = make_noisy(op.apply(x_dagger), delta, cfg.experiment.seed, weight=op.range.weight)
    problem = InverseProblem(op, penalty, data.y_delta, delta, x_hat=x_dagger)
    tableau = cfg.tableau()
    rule = cfg.rule()

    eta = op.effective_eta(seed=cfg.experiment.seed)
    tau_ok = rule.tau_ok(eta) if delta > 0 else None

    traj = integrate(
        problem,
        tableau,
        cfg.step_policy(),
        rule,
        refine=cfg.stop.refine,
        refine_tol=cfg.stop.refine_tol,
    )

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, trajectory_rows(traj))
    report = traj.stop_report
    summary = {
        "operator": op.kind,
        "penalty": penalty.kind,
        "tableau": tableau.name,
        "delta": delta,
        "tau": cfg.stop.tau,
        "eta": eta,
        "tau_ok": tau_ok,
        "c0_bound": op.c0_bound,
        "stop_reason": traj.stop_reason,
        "steps": traj.steps_taken,
        "T_star": report.T_star if report else None,
        "residual_at_stop": report.residual_at_stop if report else None,
        "refined": report.refined if report else None,
        "final_time": traj.final_state.t,
        "final_residual": traj.residuals[-1],
        "final_bregman_error": traj.phi[-1],
        "events": [e.model_dump() for e in traj.events],
    }
    write_json(out / "summary.json", summary)

    print(f"{traj.stop_reason}: {traj.steps_taken} step(s), t={traj.final_state.t:.6g}")
    suffix = f" (tau*delta={rule.threshold:.6g})" if delta > 0 else ""
    print(f"final residual {traj.residuals[-1]:.6g}{suffix}")
    return exit_code(traj.stop_reason)


def run_sweep(cfg: RunConfig) -> int:
    """Noise-level sweep; writes rate_table.csv and summary.json."""
    x_dagger = cfg.reference_solution()
    op = cfg.build_operator(x_dagger)
    rate_cfg = cfg.rate_config(op)
    table = run_rate_study(
        op,
        cfg.penalty_spec(op.n),
        ReferenceSolution(x_dagger=x_dagger),
        rate_cfg,
        cfg.tableau(),
        cfg.step_policy(),
    )

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "rate_table.csv", RATE_HEADER, [r.csv_row() for r in table.rows])
    write_json(
        out / "summary.json",
        {
            "kind": "rate_sweep",
            "slope": table.slope,
            "nu": rate_cfg.nu,
            "r_f": rate_cfg.r_f,
            "bounds_hold": table.bounds_hold,
            "rows": [r.model_dump() for r in table.rows],
        },
    )

    print(f"rate sweep over {len(table.rows)} noise level(s): slope={table.slope}")
    return EXIT_OK if all(r.stopped for r in table.rows) else EXIT_MAX_STEPS


def run_order(cfg: RunConfig) -> int:
    """Order study against the closed-form linear flow; writes order_table.csv."""
    if cfg.operator.kind != "dense_linear" or cfg.penalty.kind != "quadratic":
        raise ConfigError(
            ["experiment.kind: order studies need dense_linear with a quadratic penalty"]
        )
    x_dagger = cfg.reference_solution()
    op = cfg.build_operator(x_dagger)
    data = make_noisy(op.apply(x_dagger), cfg.experiment.delta, cfg.experiment.seed)
    table = run_order_study(
        op.matrix,
        data.y_delta,
        [get_tableau(name) for name in cfg.experiment.tableaux],
        cfg.experiment.dts,
        horizon=cfg.experiment.horizon,
        workers=cfg.experiment.workers,
    )

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "order_table.csv", ORDER_HEADER, [r.csv_row() for r in table.rows])
    write_json(out / "summary.json", {"kind": "order_study", "slopes": table.slopes})

    for name, slope in table.slopes.items():
        print(f"{name}: slope={slope}")
    return EXIT_OK


def run_sparse_demo(cfg: RunConfig) -> int:
    """Sparse recovery with elastic-net and quadratic penalties; writes recovery.csv."""
    exp = cfg.experiment
    report = sparse_recovery_demo(
        n=cfg.operator.n,
        support=exp.support,
        delta=exp.delta,
        seed=exp.seed,
        beta=cfg.penalty.beta,
        cond=cfg.operator.cond,
        tau=cfg.stop.tau,
        max_steps=cfg.flow.max_steps,
        tableau=cfg.tableau(),
    )

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "recovery.csv",
        RECOVERY_HEADER,
        [
            [r.penalty, r.precision, r.recall, r.tv, r.bregman_error, r.stop_reason, r.steps]
            for r in report.runs.values()
        ],
    )
    write_json(out / "summary.json", {"kind": "sparse_demo", **report.model_dump()})

    for r in report.runs.values():
        print(f"{r.penalty}: precision={r.precision:.3f} recall={r.recall:.3f}")
    return EXIT_OK


EXPERIMENTS = {
    "single": run_single,
    "rate_sweep": run_sweep,
    "order_study": run_order,
    "sparse_demo": run_sparse_demo,
}


def validate_tableau_file(path: str | Path) -> int:
    tab = load_tableau(path)
    report = validate_tableau(tab)
    print(report.summary)
    return EXIT_OK if report.valid else EXIT_CONFIG


# =============================================================================
# Entry point
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="YAML run configuration")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value (repeatable), e.g. flow.dt=0.01",
    )
    common.add_argument("--output", type=Path, help="Output directory")
    common.add_argument("--seed", type=int, help="Base random seed")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(
        prog="regflow", description="Asymptotical regularization with convex penalties"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Run the configured experiment")
    sub.add_parser("sweep", parents=[common], help="Noise-level convergence-rate sweep")
    sub.add_parser("order", parents=[common], help="Runge-Kutta order study")
    vt = sub.add_parser("validate-tableau", help="Validate a Butcher tableau file")
    vt.add_argument("path", type=Path, help="Tableau text file")
    vt.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.output is not None:
        overrides.append(f"output={args.output}")
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    return parse_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging("WARNING" if args.quiet else os.environ.get("REGFLOW_LOG_LEVEL", "INFO"))

    try:
        if args.command == "validate-tableau":
            return validate_tableau_file(args.path)

        cfg = _load(args)
        if not args.quiet:
            setup_logging(os.environ.get("REGFLOW_LOG_LEVEL", cfg.log_level))

        if args.command == "sweep":
            return run_sweep(cfg)
        if args.command == "order":
            return run_order(cfg)
        return EXPERIMENTS[cfg.experiment.kind](cfg)

    except (ConfigError, FileFormatError, TableauError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
