import json
from pathlib import Path

import numpy as np
import pytest

from pftransport.config import (
    ConfigError,
    ControlTask,
    PredictTask,
    load_config,
    parse_config,
)


class TestDefaults:
    def test_empty_config_is_duffing_prediction(self):
        cfg = parse_config({})
        assert cfg.system.kind == "duffing"
        assert cfg.dictionary.n_per_dim == 30
        assert np.allclose(cfg.dictionary.lower, [-2.5, -2.5])
        assert cfg.estimation.dt == 0.005
        assert isinstance(cfg.task, PredictTask)
        assert cfg.task.duration == 3.0
        assert cfg.validation.n_samples == 1000

    def test_steps_property(self):
        cfg = parse_config({})
        assert cfg.steps == 600

    def test_scalar_covariance_expands(self):
        cfg = parse_config({"initial_density": {"mean": [0.0, 0.0], "cov": 0.1}})
        assert np.allclose(cfg.initial_density.cov, 0.1 * np.eye(2))

    def test_rotlet_rotors(self):
        cfg = parse_config({"system": {"kind": "rotlet"}})
        assert np.allclose(cfg.system.rotor_positions, [[-1.0, 0.0], [1.0, 0.0]])

    def test_control_task_weights(self):
        cfg = parse_config({
            "task": {
                "kind": "control",
                "target_mean": [1.0, 0.0],
                "weights": {"stage_mean": 2.0, "terminal_second": 500.0},
            }
        })
        task = cfg.task
        assert isinstance(task, ControlTask)
        assert task.stage_mean_weight == 2.0
        assert task.terminal_second_weight == 500.0
        assert task.terminal_mean_weight == 1000.0  # untouched default


class TestInitialControls:
    def base(self, segments):
        return {
            "system": {"kind": "rotlet"},
            "task": {"kind": "control", "target_mean": [0.0, 0.0],
                     "initial_controls": segments},
        }

    def test_segments_parse(self):
        cfg = parse_config(self.base([[0.45, [0.0, 2.0]], [1.0, [-2.0, 0.0]]]))
        segs = cfg.task.initial_controls
        assert len(segs) == 2
        assert segs[0][0] == 0.45
        assert np.allclose(segs[1][1], [-2.0, 0.0])

    def test_warm_start_array(self):
        from pftransport.experiments import _warm_start
        cfg = parse_config(self.base([[0.5, [0.0, 2.0]], [1.0, [-2.0, 0.0]]]))
        u = _warm_start(cfg.task, 10, 2)
        assert u.shape == (10, 2)
        assert np.allclose(u[:5], [0.0, 2.0])
        assert np.allclose(u[5:], [-2.0, 0.0])

    def test_decreasing_fractions_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(self.base([[0.8, [0.0, 1.0]], [0.5, [1.0, 0.0]]]))

    def test_fraction_beyond_one_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(self.base([[1.5, [0.0, 1.0]]]))

    def test_unset_gives_none(self):
        cfg = parse_config({"task": {"kind": "control", "target_mean": [0.0, 0.0]}})
        assert cfg.task.initial_controls is None


class TestValidationErrors:
    def assert_field(self, raw, field):
        with pytest.raises(ConfigError) as err:
            parse_config(raw)
        assert err.value.field == field

    def test_bad_system_kind(self):
        self.assert_field({"system": {"kind": "lorenz"}}, "system.kind")

    def test_bad_dt(self):
        self.assert_field({"estimation": {"dt": -0.01}}, "estimation.dt")

    def test_bad_bounds(self):
        self.assert_field(
            {"dictionary": {"lower": [1.0, 1.0], "upper": [0.0, 2.0]}},
            "dictionary.upper")

    def test_bad_cov_shape(self):
        self.assert_field(
            {"initial_density": {"mean": [0.0, 0.0], "cov": [[1.0, 0.0]]}},
            "initial_density.cov")

    def test_missing_target_mean(self):
        self.assert_field({"task": {"kind": "control"}}, "task.target_mean")

    def test_zero_control_weight(self):
        self.assert_field(
            {"task": {"kind": "control", "target_mean": [0.0, 0.0],
                      "weights": {"control": 0.0}}},
            "task.weights.control")

    def test_horizon_not_multiple_of_dt(self):
        self.assert_field(
            {"task": {"kind": "predict", "duration": 0.0123}}, "task")

    def test_bad_task_kind(self):
        self.assert_field({"task": {"kind": "mpc"}}, "task.kind")

    def test_nonobject_root(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2, 3])


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_relative_output_dir_resolves_against_config(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"output_dir": "results"}))
        cfg = load_config(p)
        assert cfg.output_dir == tmp_path / "results"

    def test_absolute_output_dir_kept(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"output_dir": "/tmp/xyz"}))
        cfg = load_config(p)
        assert cfg.output_dir == Path("/tmp/xyz")


class TestBundledConfigs:
    @pytest.mark.parametrize("name,n_per_dim", [
        ("duffing_openloop.json", 30),
        ("duffing_control.json", 30),
        ("rotlet_control.json", 35),
    ])
    def test_bundled_config_parses(self, name, n_per_dim):
        import pftransport
        path = Path(pftransport.__file__).parent / "configs" / name
        cfg = load_config(path)
        assert cfg.dictionary.n_per_dim == n_per_dim
