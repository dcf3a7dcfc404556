"""
Tests for the experiment harness: noise, the closed-form oracle, sweeps and demos.
"""

import threading
import time

import numpy as np
import pytest
import scipy.linalg
from pydantic import ValidationError

from regflow.core.experiments import (
    NoiseModelError,
    RateStudyConfig,
    ReferenceSolution,
    _gather_rows,
    fit_slope,
    make_noisy,
    order_study,
    piecewise_constant_solution,
    quadratic_stability_constant,
    rate_study,
    run_order_study,
    run_rate_study,
    showalter_oracle,
    smooth_solution,
    sparse_recovery_demo,
    sparse_solution,
    stability_probe,
    support_scores,
    tv_recovery_demo,
    well_conditioned_matrix,
)
from regflow.core.flow import InverseProblem, StepPolicy
from regflow.core.operators import DenseLinear
from regflow.core.penalty import PenaltySpec, total_variation

# =============================================================================
# Data Generation
# =============================================================================


class TestMakeNoisy:
    """Tests for exact-norm noise."""

    def test_noise_has_exact_norm(self, rng):
        y = rng.standard_normal(30)
        for delta in [1e-1, 1e-3, 1e-6]:
            data = make_noisy(y, delta, seed=3)
            assert np.linalg.norm(data.y_delta - y) == pytest.approx(delta, rel=1e-12)

    def test_weighted_norm(self):
        y = np.ones(11)
        data = make_noisy(y, 0.1, seed=0, weight=0.1)
        assert np.sqrt(0.1) * np.linalg.norm(data.y_delta - y) == pytest.approx(0.1, rel=1e-12)

    def test_seeded(self):
        a = make_noisy(np.zeros(5), 0.1, seed=42)
        b = make_noisy(np.zeros(5), 0.1, seed=42)
        c = make_noisy(np.zeros(5), 0.1, seed=43)
        np.testing.assert_array_equal(a.y_delta, b.y_delta)
        assert not np.array_equal(a.y_delta, c.y_delta)

    def test_zero_delta_copies(self):
        y = np.array([1.0, 2.0])
        data = make_noisy(y, 0.0, seed=0)
        np.testing.assert_array_equal(data.y_delta, y)
        assert data.y_delta is not y

    def test_empty_data_rejected(self):
        with pytest.raises(NoiseModelError, match="empty"):
            make_noisy(np.zeros(0), 0.1, seed=0)
        assert make_noisy(np.zeros(0), 0.0, seed=0).y_delta.shape == (0,)

    def test_negative_delta_rejected(self):
        with pytest.raises(NoiseModelError):
            make_noisy(np.zeros(2), -0.1, seed=0)


class TestSolutions:
    """Tests for reference matrices and solutions."""

    def test_well_conditioned_singular_values(self):
        matrix = well_conditioned_matrix(8, cond=3.0, seed=1, sigma_min=0.5)
        sigma = np.linalg.svd(matrix, compute_uv=False)
        np.testing.assert_allclose(sigma, np.linspace(1.5, 0.5, 8), atol=1e-12)

    def test_well_conditioned_rejects_bad_cond(self):
        with pytest.raises(ValueError, match="cond"):
            well_conditioned_matrix(3, cond=0.5)

    def test_quadratic_stability_constant(self):
        assert quadratic_stability_constant(np.diag([2.0, 4.0])) == pytest.approx(0.125)

    def test_sparse_solution(self, rng):
        x = sparse_solution(20, 3, rng)
        nonzero = x[x != 0.0]
        assert nonzero.shape == (3,)
        assert np.all((np.abs(nonzero) >= 1.0) & (np.abs(nonzero) <= 2.0))

    def test_sparse_solution_rejects_large_support(self, rng):
        with pytest.raises(ValueError, match="support"):
            sparse_solution(3, 4, rng)

    def test_piecewise_constant_solution(self, rng):
        x = piecewise_constant_solution(20, 4, rng)
        jumps = np.abs(np.diff(x))
        assert np.count_nonzero(jumps) == 3
        assert np.all(jumps[jumps > 0] >= 0.5 - 1e-12)

    def test_smooth_solution(self):
        x = smooth_solution(5)
        np.testing.assert_allclose(x, [0.5, 0.8, 0.5, 0.2, 0.5], atol=1e-12)

    def test_reference_exact_data(self):
        ref = ReferenceSolution(x_dagger=np.array([1.0, 2.0]))
        np.testing.assert_allclose(ref.exact_data(DenseLinear(np.eye(2) * 3.0)), [3.0, 6.0])
        assert ref.source == "constructed"


# =============================================================================
# Closed-Form Oracle
# =============================================================================


class TestShowalterOracle:
    """Tests for the closed-form linear flow."""

    def test_starts_at_zero(self):
        np.testing.assert_array_equal(showalter_oracle(np.eye(2), [1.0, 2.0], 0.0), [0.0, 0.0])

    def test_matches_matrix_exponential(self, rng):
        matrix = well_conditioned_matrix(5, cond=3.0, seed=2, sigma_min=0.5)
        y = rng.standard_normal(5)
        gram = matrix.T @ matrix
        for t in [0.1, 1.0, 5.0]:
            expected = (np.eye(5) - scipy.linalg.expm(-t * gram)) @ np.linalg.solve(matrix, y)
            np.testing.assert_allclose(showalter_oracle(matrix, y, t), expected, atol=1e-10)

    def test_long_time_limit_is_least_squares(self, rng):
        matrix = rng.standard_normal((6, 3))
        y = rng.standard_normal(6)
        lstsq = np.linalg.lstsq(matrix, y, rcond=None)[0]
        np.testing.assert_allclose(showalter_oracle(matrix, y, 1e4), lstsq, atol=1e-10)

    def test_rank_deficient_stays_finite(self):
        matrix = np.array([[1.0, 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(showalter_oracle(matrix, [2.0, 5.0], 50.0), [2.0, 0.0])

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError, match="nonnegative"):
            showalter_oracle(np.eye(1), [1.0], -1.0)


class TestFitSlope:
    """Tests for log-log slope fitting."""

    def test_exact_power_law(self):
        xs = [1e-1, 1e-2, 1e-3]
        assert fit_slope(xs, [3.0 * x**2 for x in xs]) == pytest.approx(2.0)

    def test_too_few_points(self):
        assert fit_slope([1.0], [1.0]) is None
        assert fit_slope([1.0, 2.0], [0.0, 1.0]) is None


# =============================================================================
# Concurrency
# =============================================================================


class TestGatherRows:
    """Tests for the threaded row runner."""

    async def test_results_in_row_order(self):
        def job(i):
            def run():
                time.sleep(0.01 * (5 - i))
                return i

            return run

        assert await _gather_rows([job(i) for i in range(5)], workers=3) == [0, 1, 2, 3, 4]

    async def test_respects_worker_limit(self):
        lock = threading.Lock()
        active = 0
        peak = 0

        def run():
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.02)
            with lock:
                active -= 1
            return None

        await _gather_rows([run] * 8, workers=2)
        assert peak <= 2


# =============================================================================
# Rate Study
# =============================================================================


DELTAS = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]


@pytest.fixture
def rate_setup(explicit_euler):
    matrix = well_conditioned_matrix(20, cond=2.0, seed=0)
    operator = DenseLinear(matrix)
    reference = ReferenceSolution(x_dagger=smooth_solution(20))
    cfg = RateStudyConfig(
        deltas=DELTAS, r_f=quadratic_stability_constant(matrix), seed=0, workers=4
    )
    return operator, PenaltySpec(kind="quadratic"), reference, cfg, explicit_euler


class TestRateStudy:
    """Noise-level sweep with the stability bound."""

    def test_bounds_hold_and_slope(self, rate_setup):
        operator, penalty, reference, cfg, tableau = rate_setup
        table = run_rate_study(operator, penalty, reference, cfg, tableau, StepPolicy())

        assert [r.delta for r in table.rows] == DELTAS
        assert all(r.stopped for r in table.rows)
        assert table.bounds_hold
        assert table.slope >= 1.8
        for r in table.rows:
            assert r.residual_at_stop <= 2.5 * r.delta
            assert r.bound_rhs == pytest.approx(0.5 * 3.5**2 * r.delta**2)
            assert r.events[-1] == "stopped_by_discrepancy"

    def test_error_shrinks_with_noise(self, rate_setup):
        operator, penalty, reference, cfg, tableau = rate_setup
        table = run_rate_study(operator, penalty, reference, cfg, tableau, StepPolicy())
        errors = [r.bregman_error for r in table.rows]
        assert all(b <= a for a, b in zip(errors, errors[1:]))

    async def test_async_rows_are_deterministic(self, rate_setup):
        operator, penalty, reference, cfg, tableau = rate_setup
        short = cfg.model_copy(update={"deltas": DELTAS[:3]})
        first = await rate_study(operator, penalty, reference, short, tableau, StepPolicy())
        serial = short.model_copy(update={"workers": 1})
        second = await rate_study(operator, penalty, reference, serial, tableau, StepPolicy())
        assert [r.model_dump() for r in first.rows] == [r.model_dump() for r in second.rows]

    def test_unstopped_rows_are_flagged(self, rate_setup):
        operator, penalty, reference, cfg, tableau = rate_setup
        short = cfg.model_copy(update={"deltas": [1e-3, 1e-4]})
        policy = StepPolicy(max_steps=1)
        table = run_rate_study(operator, penalty, reference, short, tableau, policy)
        assert not any(r.stopped for r in table.rows)
        assert table.slope is None
        assert not table.bounds_hold
        assert table.rows[0].csv_row()[0] == 1e-3

    def test_seeds(self):
        assert RateStudyConfig(deltas=[1e-1, 1e-2, 1e-3], seed=10).seeds == [10, 11, 12]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"deltas": []},
            {"deltas": [1e-2, 1e-1]},
            {"deltas": [1e-1, 1e-1]},
            {"deltas": [1e-1, -1e-2]},
            {"deltas": [1e-1], "nu": 2.5},
            {"deltas": [1e-1], "tau": 1.0},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValidationError):
            RateStudyConfig(**kwargs)


# =============================================================================
# Order Study and Stability
# =============================================================================


@pytest.fixture
def order_matrix():
    return well_conditioned_matrix(10, cond=3.0, seed=0, sigma_min=0.5)


class TestOrderStudy:
    """Global error against the closed-form flow."""

    def test_observed_orders(self, order_matrix, explicit_euler, heun, implicit_euler):
        y = order_matrix @ smooth_solution(10)
        table = run_order_study(
            order_matrix,
            y,
            [explicit_euler, heun, implicit_euler],
            [0.04, 0.02, 0.01, 0.005],
            horizon=5.0,
            workers=2,
        )
        assert len(table.rows) == 12
        assert table.slopes["explicit_euler"] == pytest.approx(1.0, abs=0.15)
        assert table.slopes["heun"] == pytest.approx(2.0, abs=0.15)
        assert table.slopes["implicit_euler"] == pytest.approx(1.0, abs=0.15)

    async def test_errors_shrink_with_dt(self, order_matrix, heun):
        y = order_matrix @ np.ones(10)
        table = await order_study(order_matrix, y, [heun], [0.1, 0.05], horizon=1.0)
        errors = [r.error for r in table.rows]
        assert errors[1] < errors[0]
        assert table.rows[0].csv_row() == ["heun", 0.1, errors[0]]

    async def test_rejects_increasing_dts(self, order_matrix, heun):
        with pytest.raises(ValueError, match="strictly decreasing"):
            await order_study(order_matrix, np.zeros(10), [heun], [0.01, 0.02])


class TestStabilityProbe:
    """Explicit Euler blows up beyond 2/sigma_max^2; implicit Euler halves and stays bounded."""

    def _problem(self, matrix):
        return InverseProblem(
            DenseLinear(matrix),
            PenaltySpec(kind="quadratic"),
            matrix @ np.ones(10),
            x_hat=np.ones(10),
        )

    def test_explicit_euler_unbounded(self, order_matrix, explicit_euler):
        dt = 4.0 / 1.5**2
        report = stability_probe(self._problem(order_matrix), explicit_euler, dt, steps=60)
        assert not report.bounded
        assert report.steps == 60

    def test_implicit_euler_bounded(self, order_matrix, implicit_euler):
        dt = 4.0 / 1.5**2
        report = stability_probe(self._problem(order_matrix), implicit_euler, dt, steps=60)
        assert report.bounded
        assert report.steps == 60
        assert report.final_dt == pytest.approx(0.5 / 1.5**2)


# =============================================================================
# Feature Recovery
# =============================================================================


class TestSupportScores:
    def test_scores(self):
        precision, recall = support_scores(np.array([1.0, 0.0, 1e-3]), np.array([1.0, 1.0, 0.0]))
        assert precision == pytest.approx(0.5)
        assert recall == pytest.approx(0.5)

    def test_empty_supports(self):
        assert support_scores(np.zeros(3), np.zeros(3)) == (1.0, 1.0)


@pytest.mark.slow
class TestRecoveryDemos:
    """Elastic-net and TV penalties recover sparse and piecewise-constant features."""

    def test_sparse_recovery(self):
        report = sparse_recovery_demo(n=20, support=3, delta=1e-4, seed=0)
        en = report.runs["elastic_net"]
        quad = report.runs["quadratic"]
        assert en.stop_reason == quad.stop_reason == "stopped_by_discrepancy"
        assert en.recall == 1.0
        assert quad.precision < 1.0

    def test_tv_recovery(self):
        report = tv_recovery_demo(n=20, pieces=3, delta=1e-4, seed=0)
        tv_run = report.runs["tv_quadratic"]
        assert tv_run.stop_reason == "stopped_by_discrepancy"
        assert abs(tv_run.tv - report.tv_true) <= 0.1 * report.tv_true
        assert report.tv_true == pytest.approx(
            total_variation(piecewise_constant_solution(20, 3, np.random.default_rng(0)))
        )
