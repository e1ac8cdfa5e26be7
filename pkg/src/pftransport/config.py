"""Declarative experiment configuration: JSON parsing and validation.

Defaults mirror the bundled benchmark setups, so the shipped configs are
near-empty overrides.  Validation errors carry the offending field path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the bad entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _require(cond, field_path, message):
    if not cond:
        raise ConfigError(field_path, message)


def _finite_vector(value, field_path, length=None):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field_path, "must be a numeric array")
    _require(arr.ndim == 1, field_path, "must be a flat list of numbers")
    if length is not None:
        _require(arr.shape[0] == length, field_path, f"must have length {length}")
    _require(bool(np.all(np.isfinite(arr))), field_path, "must be finite")
    return arr


@dataclass
class SystemConfig:
    kind: str  # "duffing" | "rotlet"
    rotor_positions: np.ndarray | None = None
    exclusion_radius: float = 0.05


@dataclass
class DictionaryConfig:
    lower: np.ndarray
    upper: np.ndarray
    n_per_dim: int = 30
    width: float | None = None  # None -> one grid spacing


@dataclass
class EstimationConfig:
    n_per_dim: int = 50
    dt: float = 0.005
    regularization: float | None = None  # None -> trace-scaled default
    rotor_keepout: float = 0.2
    conserve_mass: bool = True


@dataclass
class InitialDensityConfig:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class PredictTask:
    kind: str = "predict"
    duration: float = 3.0
    control: dict = field(default_factory=lambda: {"kind": "sine", "amplitude": 1.0, "frequency": 2.0})


@dataclass
class ControlTask:
    kind: str = "control"
    target_mean: np.ndarray = None
    horizon: float = 2.0
    stage_mean_weight: float = 1.0
    stage_second_weight: float = 1.0
    control_weight: float = 1.0
    terminal_mean_weight: float = 1000.0
    terminal_second_weight: float = 1000.0
    max_iter: int = 40
    tol: float = 1e-6
    #: optional warm start: piecewise-constant segments (fraction_end, u)
    initial_controls: list | None = None


@dataclass
class ValidationConfig:
    n_samples: int = 1000
    seed: int = 0


@dataclass
class ExperimentConfig:
    system: SystemConfig
    dictionary: DictionaryConfig
    estimation: EstimationConfig
    initial_density: InitialDensityConfig
    task: PredictTask | ControlTask
    validation: ValidationConfig
    output_dir: Path

    @property
    def steps(self) -> int:
        duration = self.task.duration if isinstance(self.task, PredictTask) else self.task.horizon
        steps = duration / self.estimation.dt
        return int(round(steps))


_DUFFING_DEFAULTS = {
    "dictionary": {"lower": [-2.5, -2.5], "upper": [2.5, 2.5]},
    "initial_density": {"mean": [-0.5, 1.0], "cov": 0.05},
}


def _parse_system(raw) -> SystemConfig:
    kind = raw.get("kind", "duffing")
    _require(kind in ("duffing", "rotlet"), "system.kind", "must be 'duffing' or 'rotlet'")
    if kind == "duffing":
        return SystemConfig(kind="duffing")
    positions = raw.get("rotors", [[-1.0, 0.0], [1.0, 0.0]])
    try:
        pos = np.asarray(positions, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("system.rotors", "must be a list of 2D points")
    _require(pos.ndim == 2 and pos.shape[1] == 2, "system.rotors", "must be a list of 2D points")
    _require(bool(np.all(np.isfinite(pos))), "system.rotors", "must be finite")
    excl = float(raw.get("exclusion_radius", 0.05))
    _require(excl > 0, "system.exclusion_radius", "must be positive")
    return SystemConfig(kind="rotlet", rotor_positions=pos, exclusion_radius=excl)


def _parse_task(raw, d: int):
    kind = raw.get("kind", "predict")
    if kind == "predict":
        duration = float(raw.get("duration", 3.0))
        _require(duration > 0, "task.duration", "must be positive")
        control = raw.get("control", {"kind": "sine", "amplitude": 1.0, "frequency": 2.0})
        ckind = control.get("kind", "sine")
        _require(ckind in ("sine", "zero", "constant"), "task.control.kind",
                 "must be 'sine', 'zero', or 'constant'")
        for key in ("amplitude", "frequency", "value"):
            if key in control:
                _require(math.isfinite(float(control[key])), f"task.control.{key}", "must be finite")
        return PredictTask(duration=duration, control=control)
    if kind == "control":
        target = _finite_vector(raw.get("target_mean"), "task.target_mean", d)
        horizon = float(raw.get("horizon", 2.0))
        _require(horizon > 0, "task.horizon", "must be positive")
        weights = raw.get("weights", {})
        task = ControlTask(
            target_mean=target,
            horizon=horizon,
            stage_mean_weight=float(weights.get("stage_mean", 1.0)),
            stage_second_weight=float(weights.get("stage_second", 1.0)),
            control_weight=float(weights.get("control", 1.0)),
            terminal_mean_weight=float(weights.get("terminal_mean", 1000.0)),
            terminal_second_weight=float(weights.get("terminal_second", 1000.0)),
            max_iter=int(raw.get("max_iter", 40)),
            tol=float(raw.get("tol", 1e-6)),
        )
        for name in ("stage_mean_weight", "stage_second_weight", "terminal_mean_weight",
                     "terminal_second_weight"):
            _require(getattr(task, name) >= 0, f"task.weights.{name}", "must be nonnegative")
        _require(task.control_weight > 0, "task.weights.control", "must be positive")
        _require(task.max_iter >= 1, "task.max_iter", "must be at least 1")
        segments = raw.get("initial_controls")
        if segments is not None:
            _require(isinstance(segments, list) and segments,
                     "task.initial_controls", "must be a non-empty list of segments")
            parsed = []
            prev = 0.0
            for i, seg in enumerate(segments):
                _require(isinstance(seg, (list, tuple)) and len(seg) == 2,
                         f"task.initial_controls[{i}]",
                         "must be a [fraction_end, control_vector] pair")
                frac = float(seg[0])
                _require(prev < frac <= 1.0, f"task.initial_controls[{i}]",
                         "fractions must increase and end at most at 1.0")
                u = _finite_vector(seg[1], f"task.initial_controls[{i}]")
                parsed.append((frac, u))
                prev = frac
            task.initial_controls = parsed
        return task
    raise ConfigError("task.kind", "must be 'predict' or 'control'")


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")

    system = _parse_system(raw.get("system", {}))

    dict_raw = dict(_DUFFING_DEFAULTS["dictionary"])
    dict_raw.update(raw.get("dictionary", {}))
    lower = _finite_vector(dict_raw["lower"], "dictionary.lower")
    upper = _finite_vector(dict_raw["upper"], "dictionary.upper", len(lower))
    _require(bool(np.all(upper > lower)), "dictionary.upper", "must exceed lower componentwise")
    n_per_dim = int(dict_raw.get("n_per_dim", 30))
    _require(n_per_dim >= 2, "dictionary.n_per_dim", "must be at least 2")
    width = dict_raw.get("width")
    if width is not None:
        width = float(width)
        _require(width > 0 and math.isfinite(width), "dictionary.width", "must be positive and finite")
    dictionary = DictionaryConfig(lower=lower, upper=upper, n_per_dim=n_per_dim, width=width)

    est_raw = raw.get("estimation", {})
    estimation = EstimationConfig(
        n_per_dim=int(est_raw.get("n_per_dim", 50)),
        dt=float(est_raw.get("dt", 0.005)),
        regularization=(None if est_raw.get("regularization") is None
                        else float(est_raw["regularization"])),
        rotor_keepout=float(est_raw.get("rotor_keepout", 0.2)),
        conserve_mass=bool(est_raw.get("conserve_mass", True)),
    )
    _require(estimation.n_per_dim >= 2, "estimation.n_per_dim", "must be at least 2")
    _require(estimation.dt > 0, "estimation.dt", "must be positive")
    if estimation.regularization is not None:
        _require(estimation.regularization >= 0, "estimation.regularization", "must be nonnegative")

    dens_raw = dict(_DUFFING_DEFAULTS["initial_density"])
    dens_raw.update(raw.get("initial_density", {}))
    mean = _finite_vector(dens_raw["mean"], "initial_density.mean", len(lower))
    cov_raw = dens_raw["cov"]
    if np.isscalar(cov_raw):
        _require(float(cov_raw) > 0, "initial_density.cov", "scalar covariance must be positive")
        cov = float(cov_raw) * np.eye(len(mean))
    else:
        cov = np.atleast_2d(np.asarray(cov_raw, dtype=float))
        _require(cov.shape == (len(mean), len(mean)), "initial_density.cov",
                 f"must be {len(mean)}x{len(mean)} or a positive scalar")
        _require(bool(np.all(np.isfinite(cov))), "initial_density.cov", "must be finite")
    initial = InitialDensityConfig(mean=mean, cov=cov)

    task = _parse_task(raw.get("task", {}), len(mean))

    val_raw = raw.get("validation", {})
    validation = ValidationConfig(
        n_samples=int(val_raw.get("n_samples", 1000)),
        seed=int(val_raw.get("seed", 0)),
    )
    _require(validation.n_samples >= 2, "validation.n_samples", "must be at least 2")

    out = Path(raw.get("output_dir", "out"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out

    cfg = ExperimentConfig(
        system=system,
        dictionary=dictionary,
        estimation=estimation,
        initial_density=initial,
        task=task,
        validation=validation,
        output_dir=out,
    )
    duration = task.duration if isinstance(task, PredictTask) else task.horizon
    steps = duration / estimation.dt
    _require(abs(steps - round(steps)) < 1e-9, "task",
             "duration/horizon must be an integer multiple of estimation.dt")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}")
    return parse_config(raw, base_dir=path.parent)
