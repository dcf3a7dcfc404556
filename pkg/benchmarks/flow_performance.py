"""
Performance benchmarks for regflow integration and sweeps.

Measures per-step cost of each bundled tableau, the TV proximal map against
its bounded least-squares fallback, and sequential vs concurrent rate sweeps.
Peak resident memory is reported with psutil.

Run with: uv run python benchmarks/flow_performance.py
"""

import asyncio
import statistics
import sys
import time
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np
import psutil

from regflow.core.experiments import (
    RateStudyConfig,
    ReferenceSolution,
    quadratic_stability_constant,
    rate_study,
    smooth_solution,
    well_conditioned_matrix,
)
from regflow.core.flow import InverseProblem, StepPolicy, integrate
from regflow.core.operators import DenseLinear
from regflow.core.penalty import PenaltySpec, tv_prox_bounded_lsq, tv_prox_direct
from regflow.resources import get_problem, get_tableau, list_tableaux

# =============================================================================
# Benchmark Utilities
# =============================================================================


def format_time(seconds: float) -> str:
    """Format time in human-readable format."""
    if seconds < 0.001:
        return f"{seconds * 1_000_000:.1f}µs"
    elif seconds < 1:
        return f"{seconds * 1000:.1f}ms"
    else:
        return f"{seconds:.2f}s"


def print_header(title: str) -> None:
    """Print a section header."""
    print(f"\n{'=' * 60}")
    print(f"  {title}")
    print(f"{'=' * 60}\n")


def print_stats(times: list[float], label: str) -> None:
    """Print statistics for a list of timing measurements."""
    mean = statistics.mean(times)
    stdev = statistics.stdev(times) if len(times) > 1 else 0
    print(f"  {label}:")
    print(f"    Mean:   {format_time(mean)}")
    print(f"    Stdev:  {format_time(stdev)}")
    print(f"    Min:    {format_time(min(times))}")
    print(f"    Max:    {format_time(max(times))}")


def rss_mb() -> float:
    return psutil.Process().memory_info().rss / 1024**2


# =============================================================================
# Benchmark: Step Cost per Tableau
# =============================================================================


def benchmark_step_cost(steps: int = 500, iterations: int = 3) -> dict:
    """
    Time a fixed number of steps on the bundled diagonal-cubic problem.

    Args:
        steps: Steps per run
        iterations: Runs per tableau

    Returns:
        Mapping tableau name -> mean seconds per step
    """
    print_header(f"Test 1: Step Cost ({steps} steps, {iterations} iterations)")

    bundled = get_problem("diagonal_cubic", n=200, gamma=0.1, seed=0)
    problem = InverseProblem(bundled.operator, PenaltySpec(kind="quadratic"), bundled.y)
    policy = StepPolicy(mode="scaled", max_steps=steps)

    per_step = {}
    for name in list_tableaux():
        tableau = get_tableau(name)
        times = []
        for _ in range(iterations):
            start = time.perf_counter()
            integrate(problem, tableau, policy)
            times.append((time.perf_counter() - start) / steps)
        per_step[name] = statistics.mean(times)
        print_stats(times, f"{name} (per step)")
    return per_step


# =============================================================================
# Benchmark: TV Proximal Map
# =============================================================================


def benchmark_tv_prox(sizes: list[int], iterations: int = 20) -> dict:
    """
    Compare the direct TV prox against the bounded least-squares solver.

    Args:
        sizes: Grid sizes to test
        iterations: Calls per size and solver

    Returns:
        Dictionary with mean times per size
    """
    print_header("Test 2: TV Proximal Map")

    rng = np.random.default_rng(0)
    results = {"sizes": sizes, "direct": [], "bounded_lsq": []}
    for n in sizes:
        y = np.cumsum(rng.standard_normal(n))
        for label, solver in [("direct", tv_prox_direct), ("bounded_lsq", tv_prox_bounded_lsq)]:
            start = time.perf_counter()
            for _ in range(iterations):
                solver(y, 0.5)
            results[label].append((time.perf_counter() - start) / iterations)

    print(f"  {'n':>6} | {'direct':>12} | {'bounded_lsq':>12}")
    print("  " + "-" * 38)
    for i, n in enumerate(sizes):
        print(
            f"  {n:>6} | {format_time(results['direct'][i]):>12} | "
            f"{format_time(results['bounded_lsq'][i]):>12}"
        )
    return results


# =============================================================================
# Benchmark: Sweep Concurrency
# =============================================================================


async def benchmark_sweep(workers: list[int], iterations: int = 3) -> dict:
    """
    Rate sweep over six noise levels with different worker counts.

    Args:
        workers: Worker counts to test
        iterations: Runs per worker count

    Returns:
        Dictionary with mean times and speedups relative to one worker
    """
    print_header("Test 3: Rate Sweep Concurrency")

    matrix = well_conditioned_matrix(200, cond=2.0, seed=0)
    operator = DenseLinear(matrix)
    reference = ReferenceSolution(x_dagger=smooth_solution(200))
    penalty = PenaltySpec(kind="quadratic")
    tableau = get_tableau("heun")
    deltas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4]

    means = []
    for count in workers:
        cfg = RateStudyConfig(
            deltas=deltas, r_f=quadratic_stability_constant(matrix), workers=count
        )
        times = []
        for _ in range(iterations):
            start = time.perf_counter()
            await rate_study(operator, penalty, reference, cfg, tableau, StepPolicy())
            times.append(time.perf_counter() - start)
        means.append(statistics.mean(times))
        print_stats(times, f"workers={count}")

    speedups = [means[0] / m if m > 0 else 0 for m in means]
    print(f"\n  Best speedup: {max(speedups):.2f}x")
    return {"workers": workers, "means": means, "speedups": speedups}


# =============================================================================
# Main
# =============================================================================


async def main():
    """Run all benchmarks."""
    print("\n" + "=" * 60)
    print("  regflow Performance Benchmarks")
    print("=" * 60)
    print(f"\n  Python: {sys.version.split()[0]}")
    print(f"  NumPy: {np.__version__}")
    print(f"  CPU cores: {psutil.cpu_count()}")
    start_rss = rss_mb()

    step_results = benchmark_step_cost()
    tv_results = benchmark_tv_prox([50, 200, 1000])
    sweep_results = await benchmark_sweep([1, 2, 4])

    print_header("Summary")
    fastest = min(step_results, key=step_results.get)
    print(f"  Cheapest step: {fastest} at {format_time(step_results[fastest])}")
    ratio = tv_results["bounded_lsq"][-1] / tv_results["direct"][-1]
    print(f"  TV prox (n={tv_results['sizes'][-1]}): direct is {ratio:.1f}x faster")
    print(f"  Sweep: best speedup {max(sweep_results['speedups']):.2f}x")
    print(f"  Resident memory: {start_rss:.1f} MB -> {rss_mb():.1f} MB")


if __name__ == "__main__":
    asyncio.run(main())
