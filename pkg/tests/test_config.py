"""
Tests for YAML run configuration, overrides and builders.
"""

import numpy as np
import pytest

from regflow.config import ConfigError, RunConfig, parse_config, parse_override
from regflow.core.operators import AutoConvolution, DenseLinear, DiagonalCubic

# =============================================================================
# Parsing
# =============================================================================


class TestParseConfig:
    """Tests for parse_config."""

    def test_minimal_config(self, write_config):
        cfg = parse_config(write_config())
        assert cfg.penalty.kind == "quadratic"
        assert cfg.flow.tableau == "explicit_euler"
        assert cfg.flow.step_mode == "fixed"
        assert cfg.flow.max_steps == 200
        assert cfg.stop.tau == 2.5
        assert cfg.experiment.kind == "single"

    def test_empty_file_gives_defaults(self, write_config):
        cfg = parse_config(write_config(""))
        assert cfg == RunConfig()

    def test_tau_must_exceed_one(self, write_config):
        path = write_config("stop:\n  tau: 1.0\n")
        with pytest.raises(ConfigError, match="tau must exceed 1") as exc_info:
            parse_config(path)
        assert exc_info.value.errors[0].startswith("stop.tau:")

    def test_unknown_key(self, write_config):
        with pytest.raises(ConfigError, match="flow.bogus"):
            parse_config(write_config("flow:\n  bogus: 1\n"))

    def test_type_mismatch(self, write_config):
        with pytest.raises(ConfigError, match="flow.dt"):
            parse_config(write_config("flow:\n  dt: fast\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="file not found"):
            parse_config(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, write_config):
        with pytest.raises(ConfigError, match="invalid YAML"):
            parse_config(write_config("flow: [unclosed\n"))

    def test_top_level_must_be_mapping(self, write_config):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config(write_config("- 1\n- 2\n"))

    def test_collects_every_error(self, write_config):
        path = write_config("flow:\n  dt: -1\nstop:\n  tau: 0.5\n")
        with pytest.raises(ConfigError) as exc_info:
            parse_config(path)
        assert len(exc_info.value.errors) == 2

    def test_custom_tableau_needs_path(self, write_config):
        with pytest.raises(ConfigError, match="custom_tableau_path"):
            parse_config(write_config("flow:\n  tableau: custom\n"))

    def test_matrix_sources_are_exclusive(self, write_config, matrix_file):
        matrix_file(np.eye(2))
        text = "operator:\n  matrix: [[1.0]]\n  matrix_path: m.csv\n"
        with pytest.raises(ConfigError, match="either matrix or matrix_path"):
            parse_config(write_config(text))

    @pytest.mark.parametrize("kind", ["elastic_net", "tv_quadratic"])
    def test_beta_required_unless_quadratic(self, write_config, kind):
        with pytest.raises(ConfigError, match="beta is required for elastic_net/tv_quadratic"):
            parse_config(write_config(f"penalty:\n  kind: {kind}\n"))

    def test_quadratic_needs_no_beta(self, write_config):
        cfg = parse_config(write_config())
        assert cfg.penalty.beta is None
        assert cfg.penalty_spec(2).beta == 0.0

    def test_sparse_demo_needs_beta(self, write_config):
        with pytest.raises(ConfigError, match="penalty.beta is required for sparse_demo"):
            parse_config(write_config(), ["experiment.kind=sparse_demo"])


class TestOverrides:
    """Tests for dotted-key overrides."""

    def test_override_beats_file(self, write_config):
        cfg = parse_config(write_config(), ["flow.dt=0.01", "stop.tau=3"])
        assert cfg.flow.dt == 0.01
        assert cfg.stop.tau == 3.0

    def test_later_override_wins(self, write_config):
        cfg = parse_config(write_config(), ["flow.dt=0.01", "flow.dt=0.02"])
        assert cfg.flow.dt == 0.02

    def test_list_values(self, write_config):
        cfg = parse_config(write_config(), ["experiment.deltas=[0.1, 0.01]"])
        assert cfg.experiment.deltas == [0.1, 0.01]

    def test_creates_sections(self, write_config):
        cfg = parse_config(write_config(""), ["penalty.kind=elastic_net", "penalty.beta=2"])
        assert cfg.penalty.kind == "elastic_net"
        assert cfg.penalty.beta == 2.0

    def test_override_is_validated(self, write_config):
        with pytest.raises(ConfigError, match="tau must exceed 1"):
            parse_config(write_config(), ["stop.tau=0.9"])

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="dotted.key=value"):
            parse_override("flow.dt")

    def test_override_into_scalar(self, write_config):
        with pytest.raises(ConfigError, match="'dt' is not a section"):
            parse_config(write_config(), ["flow.dt.x=1"])

    def test_parse_override_types(self):
        assert parse_override("a.b=3") == ("a.b", 3)
        assert parse_override("a.b=true") == ("a.b", True)
        assert parse_override("a.b=heun") == ("a.b", "heun")
        assert parse_override("a.b=") == ("a.b", None)


class TestPathResolution:
    """Input paths are resolved against the config file's directory."""

    def test_relative_matrix_path(self, tmp_path, matrix_file):
        sub = tmp_path / "conf"
        sub.mkdir()
        matrix_file(2.0 * np.eye(2), directory=sub)
        path = sub / "run.yaml"
        path.write_text("operator:\n  matrix_path: m.csv\n")
        cfg = parse_config(path)
        assert cfg.operator.matrix_path == (sub / "m.csv").resolve()
        np.testing.assert_allclose(cfg.build_operator().matrix, 2.0 * np.eye(2))

    def test_overridden_path_uses_config_directory(self, tmp_path, matrix_file, monkeypatch):
        sub = tmp_path / "conf"
        sub.mkdir()
        matrix_file(3.0 * np.eye(2), directory=sub)
        path = sub / "run.yaml"
        path.write_text("")
        monkeypatch.chdir(tmp_path)
        cfg = parse_config(path, ["operator.matrix_path=m.csv"])
        assert cfg.operator.matrix_path == (sub / "m.csv").resolve()
        np.testing.assert_allclose(cfg.build_operator().matrix, 3.0 * np.eye(2))

    def test_relative_tableau_path(self, tmp_path, heun_file):
        path = tmp_path / "run.yaml"
        path.write_text(f"flow:\n  tableau: custom\n  custom_tableau_path: {heun_file.name}\n")
        tab = parse_config(path).tableau()
        assert tab.name == "heun"
        assert tab.s == 2

    def test_missing_input_file(self, write_config):
        with pytest.raises(ConfigError, match="operator.matrix_path"):
            parse_config(write_config("operator:\n  matrix_path: nowhere.csv\n"))


# =============================================================================
# Builders
# =============================================================================


class TestBuilders:
    """Tests for the RunConfig builder methods."""

    def test_dense_linear_defaults_rho_to_reference(self, write_config):
        cfg = parse_config(write_config())
        x_dagger = cfg.reference_solution()
        op = cfg.build_operator(x_dagger)
        assert isinstance(op, DenseLinear)
        assert op.rho == pytest.approx(np.linalg.norm(x_dagger))

    def test_generated_matrix(self, write_config):
        cfg = parse_config(write_config("operator:\n  n: 6\n  cond: 3\n"))
        op = cfg.build_operator()
        assert op.n == 6
        assert op.c0_bound == pytest.approx(3.0)

    def test_diagonal_cubic(self, write_config):
        cfg = parse_config(write_config("operator:\n  kind: diagonal_cubic\n  n: 4\n  eta: 0.2\n"))
        op = cfg.build_operator()
        assert isinstance(op, DiagonalCubic)
        assert op.eta == 0.2

    def test_auto_convolution_default_x0(self, write_config):
        cfg = parse_config(write_config("operator:\n  kind: auto_convolution\n  n: 5\n"))
        op = cfg.build_operator(cfg.reference_solution())
        assert isinstance(op, AutoConvolution)
        np.testing.assert_allclose(op.x0, np.full(5, 0.5))

    def test_tv_penalty_grid(self, write_config):
        cfg = parse_config(write_config("penalty:\n  kind: tv_quadratic\n  beta: 0.5\n"))
        pen = cfg.penalty_spec(7)
        assert pen.grid_n == 7
        assert pen.beta == 0.5

    def test_step_policy_and_rule(self, write_config):
        cfg = parse_config(write_config(), ["experiment.delta=0.01", "flow.t_end=2"])
        policy = cfg.step_policy()
        assert policy.mode == "fixed"
        assert policy.t_end == 2.0
        assert cfg.rule().threshold == pytest.approx(0.025)

    def test_rate_config_computes_stability_constant(self, write_config):
        cfg = parse_config(write_config(), ["experiment.deltas=[0.1, 0.01]", "experiment.seed=5"])
        rate_cfg = cfg.rate_config(cfg.build_operator())
        assert rate_cfg.r_f == pytest.approx(0.5)
        assert rate_cfg.seeds == [5, 6]

    def test_rate_config_leaves_nonlinear_unbounded(self, write_config):
        cfg = parse_config(write_config("operator:\n  kind: diagonal_cubic\n  n: 3\n"))
        assert cfg.rate_config(cfg.build_operator()).r_f is None
