"""End-to-end experiment stages: estimate, predict, control, validate, compare.

Each stage reads an ExperimentConfig, consumes or produces artifact files in
the config's output directory, and returns a JSON-serializable summary.
Stages are independently runnable; the serialized model makes estimation
cacheable.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import basis, ddp, dynamics, estimation, lifted, validation
from .config import ControlTask, ExperimentConfig, PredictTask
from .validation import RNG_ALGORITHM

__all__ = [
    "build_system",
    "build_dictionary",
    "run_estimate",
    "run_predict",
    "run_control",
    "run_validate",
    "run_compare_baselines",
    "run_all",
    "MissingArtifactError",
]

MODEL_FILE = "model.pfm"
MOMENTS_FILE = "moments.csv"
CONTROLS_FILE = "controls.csv"
SUMMARY_FILE = "summary.json"


class MissingArtifactError(FileNotFoundError):
    """A stage prerequisite file (model, controls) does not exist."""


def build_system(cfg: ExperimentConfig):
    if cfg.system.kind == "duffing":
        return dynamics.duffing_system()
    rotors = dynamics.RotorConfig(cfg.system.rotor_positions, cfg.system.exclusion_radius)
    return dynamics.rotlet_system(rotors)


def build_dictionary(cfg: ExperimentConfig) -> basis.Dictionary:
    d = cfg.dictionary
    width = d.width
    if width is None:
        width = basis.default_width(d.lower, d.upper, d.n_per_dim)
    return basis.build_rbf_grid(d.lower, d.upper, d.n_per_dim, width)


def _ic_keep(cfg: ExperimentConfig):
    if cfg.system.kind != "rotlet":
        return None
    positions = cfg.system.rotor_positions
    keepout = cfg.estimation.rotor_keepout

    def keep(x):
        return all(np.linalg.norm(x - p) > keepout for p in positions)

    return keep


def control_signal(cfg: ExperimentConfig, n_c: int, steps: int) -> np.ndarray:
    """Zero-order-hold control samples of the configured open-loop signal."""
    task = cfg.task
    if not isinstance(task, PredictTask):
        raise ValueError("control_signal applies to predict tasks only")
    t = np.arange(steps) * cfg.estimation.dt
    spec = task.control
    kind = spec.get("kind", "sine")
    if kind == "zero":
        col = np.zeros(steps)
    elif kind == "constant":
        col = np.full(steps, float(spec.get("value", 0.0)))
    else:
        amp = float(spec.get("amplitude", 1.0))
        freq = float(spec.get("frequency", 2.0))
        col = amp * np.sin(2.0 * np.pi * freq * t)
    return np.tile(col[:, None], (1, n_c))


def _model_path(cfg: ExperimentConfig) -> Path:
    return cfg.output_dir / MODEL_FILE


def run_estimate(cfg: ExperimentConfig) -> dict:
    """Estimate the generator model and write it to the output directory."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    system = build_system(cfg)
    dictionary = build_dictionary(cfg)
    ics = basis.grid_points(cfg.dictionary.lower, cfg.dictionary.upper, cfg.estimation.n_per_dim)
    model = estimation.build_generator_model(
        system,
        dictionary,
        ics,
        cfg.estimation.dt,
        reg=cfg.estimation.regularization,
        keep=_ic_keep(cfg),
        conserve_mass=cfg.estimation.conserve_mass,
    )
    path = _model_path(cfg)
    estimation.save_model(model, path)
    return {
        "stage": "estimate",
        "model_file": str(path),
        "dictionary_size": model.size,
        "dictionary_width": dictionary.width,
        "control_dim": model.control_dim,
        "dt_data": model.dt_data,
        "L0_max_abs": float(np.max(np.abs(model.L0))),
    }


def _load_model(cfg: ExperimentConfig) -> estimation.GeneratorModel:
    path = _model_path(cfg)
    if not path.exists():
        raise MissingArtifactError(f"model file not found: {path}; run 'estimate' first")
    return estimation.load_model(path)


def _project_initial(cfg: ExperimentConfig, model: estimation.GeneratorModel):
    return basis.project_gaussian(
        model.dictionary, cfg.initial_density.mean, cfg.initial_density.cov
    )


def _write_controls(path: Path, controls: np.ndarray, dt: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u_{i + 1}" for i in range(controls.shape[1])])
        for t in range(controls.shape[0]):
            writer.writerow([repr(t * dt)] + [repr(float(v)) for v in controls[t]])


def _read_controls(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingArtifactError(f"controls file not found: {path}; run 'control' first")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def _predicted_series(traj: lifted.LiftedTrajectory, d: int) -> validation.MomentSeries:
    return validation.MomentSeries(traj.times, traj.outputs[:, :d], traj.outputs[:, d:])


def run_predict(cfg: ExperimentConfig) -> dict:
    """Open-loop moment prediction vs Monte Carlo and the linearized baseline."""
    from .plots import plot_moments

    model = _load_model(cfg)
    system = build_system(cfg)
    dt = cfg.estimation.dt
    steps = cfg.steps
    d = model.dictionary.dim
    controls = control_signal(cfg, model.control_dim, steps)

    coeffs, proj = _project_initial(cfg, model)
    traj = lifted.rollout(model, coeffs.coeffs, controls, dt)
    predicted = _predicted_series(traj, d)

    ensemble = validation.sample_gaussian(
        cfg.initial_density.mean, cfg.initial_density.cov,
        cfg.validation.n_samples, cfg.validation.seed,
    )
    mc = validation.monte_carlo_moments(system, ensemble, controls, dt)
    linearized = validation.linearized_moment_prediction(
        system, cfg.initial_density.mean, cfg.initial_density.cov, controls, dt
    )

    series = {"predicted": predicted, "sample": mc, "linearized": linearized}
    validation.write_moment_csv(cfg.output_dir / MOMENTS_FILE, series)
    _write_controls(cfg.output_dir / CONTROLS_FILE, controls, dt)
    plot_moments(cfg.output_dir, series, d)

    err = validation.moment_error(predicted, mc)
    lin_err = validation.moment_error(linearized, mc)
    mass = traj.states @ basis.mass_vector(model.dictionary)
    summary = {
        "stage": "predict",
        "rng": RNG_ALGORITHM,
        "seed": cfg.validation.seed,
        "n_samples": ensemble.count,
        "dictionary_width": model.dictionary.width,
        "projection": {
            "max_abs_error": proj.max_abs_error,
            "peak_value": proj.peak_value,
            "min_value": proj.min_value,
            "mass": proj.mass,
        },
        "m1_max_error": err["m1_max"],
        "m2_max_error": err["m2_max"],
        "m1_rms_error": err["m1_rms"],
        "linearized_m1_max_error": lin_err["m1_max"],
        "mass_drift": float(np.max(np.abs(mass - mass[0])) / abs(mass[0])),
        "excluded_samples": mc.excluded,
    }
    _write_summary(cfg, summary)
    return summary


def _tracking_spec(cfg: ExperimentConfig, model_p: int, d: int) -> ddp.OcpSpec:
    task = cfg.task
    if not isinstance(task, ControlTask):
        raise ValueError("control stage requires a control task")
    steps = cfg.steps
    n2 = d * (d + 1) // 2
    target = task.target_mean
    pairs = basis.second_moment_pairs(d)
    # zero desired variance: target second moment is the outer product
    m2_ref = np.array([target[i] * target[j] for i, j in pairs])
    y_row = np.concatenate([target, m2_ref])
    S = np.diag([task.stage_mean_weight] * d + [task.stage_second_weight] * n2)
    S_H = np.diag([task.terminal_mean_weight] * d + [task.terminal_second_weight] * n2)
    return ddp.OcpSpec(
        H=steps,
        dt=cfg.estimation.dt,
        S=S,
        R=task.control_weight * np.eye(_control_dim(cfg)),
        S_H=S_H,
        y_ref=np.tile(y_row, (steps + 1, 1)),
        u_init=_warm_start(task, steps, _control_dim(cfg)),
    )


def _warm_start(task: ControlTask, steps: int, n_c: int) -> np.ndarray | None:
    """Piecewise-constant initial control guess from the task's segments."""
    if task.initial_controls is None:
        return None
    u = np.zeros((steps, n_c))
    start = 0
    for frac, vec in task.initial_controls:
        if vec.shape[0] != n_c:
            raise ValueError(
                f"initial_controls segment has {vec.shape[0]} entries, expected {n_c}")
        end = int(round(frac * steps))
        u[start:end] = vec
        start = end
    return u


def _control_dim(cfg: ExperimentConfig) -> int:
    if cfg.system.kind == "duffing":
        return 1
    return cfg.system.rotor_positions.shape[0]


def run_control(cfg: ExperimentConfig) -> dict:
    """DDP moment steering on the lifted model; writes controls and summary."""
    from .plots import plot_moments

    model = _load_model(cfg)
    task = cfg.task
    if not isinstance(task, ControlTask):
        raise ValueError("run_control requires a control task")
    d = model.dictionary.dim
    coeffs, proj = _project_initial(cfg, model)
    spec = _tracking_spec(cfg, model.output_dim, d)
    options = ddp.SolverOptions(max_iter=task.max_iter, tol=task.tol)
    report = ddp.solve(model, coeffs.coeffs, spec, options)

    _write_controls(cfg.output_dir / CONTROLS_FILE, report.controls, cfg.estimation.dt)
    predicted = _predicted_series(report.trajectory, d)
    validation.write_moment_csv(cfg.output_dir / MOMENTS_FILE, {"predicted": predicted})
    plot_moments(cfg.output_dir, {"predicted": predicted}, d, reference=spec.y_ref[0])

    y_H = report.trajectory.outputs[-1]
    summary = {
        "stage": "control",
        "converged": report.converged,
        "iterations": report.iterations,
        "cost_history": report.cost_history,
        "final_cost": report.cost_history[-1],
        "regularization_final": report.regularization_final,
        "target_mean": task.target_mean.tolist(),
        "predicted_final_mean": y_H[:d].tolist(),
        "predicted_final_mean_error": float(np.max(np.abs(y_H[:d] - task.target_mean))),
        "dictionary_width": model.dictionary.width,
        "projection_mass": proj.mass,
    }
    _write_summary(cfg, summary)
    return summary


def run_validate(cfg: ExperimentConfig) -> dict:
    """Monte Carlo rollout of previously computed controls on the true system."""
    system = build_system(cfg)
    controls = _read_controls(cfg.output_dir / CONTROLS_FILE)
    dt = cfg.estimation.dt
    ensemble = validation.sample_gaussian(
        cfg.initial_density.mean, cfg.initial_density.cov,
        cfg.validation.n_samples, cfg.validation.seed,
    )
    mc = validation.monte_carlo_moments(system, ensemble, controls, dt)
    summary = {
        "stage": "validate",
        "rng": RNG_ALGORITHM,
        "seed": cfg.validation.seed,
        "n_samples": ensemble.count,
        "excluded_samples": mc.excluded,
        "final_sample_mean": mc.m1[-1].tolist(),
        "final_sample_m2": mc.m2[-1].tolist(),
    }
    if isinstance(cfg.task, ControlTask):
        err = np.abs(mc.m1[-1] - cfg.task.target_mean)
        summary["final_mean_error"] = float(np.max(err))
        summary["target_mean"] = cfg.task.target_mean.tolist()
    _write_summary(cfg, summary, name="validate_summary.json")
    return summary


def _final_sample_stats(system, ensemble, controls, dt, target):
    mc = validation.monte_carlo_moments(system, ensemble, controls, dt)
    m1 = mc.m1[-1]
    d = m1.shape[0]
    pairs = basis.second_moment_pairs(d)
    var = np.array([mc.m2[-1][pairs.index((i, i))] - m1[i] ** 2 for i in range(d)])
    return {
        "final_mean": m1.tolist(),
        "distance_to_target": float(np.linalg.norm(m1 - target)),
        "final_std": np.sqrt(np.maximum(var, 0.0)).tolist(),
    }


def run_compare_baselines(cfg: ExperimentConfig, n_samples: int = 500) -> dict:
    """PF-DDP vs standard state-space DDP on one sampled ensemble.

    The state-space baseline treats the density mean as a deterministic
    initial condition and tracks the target state directly.
    """
    model = _load_model(cfg)
    system = build_system(cfg)
    task = cfg.task
    if not isinstance(task, ControlTask):
        raise ValueError("compare-baselines requires a control task")
    d = model.dictionary.dim
    dt = cfg.estimation.dt
    steps = cfg.steps

    coeffs, _ = _project_initial(cfg, model)
    spec = _tracking_spec(cfg, model.output_dim, d)
    options = ddp.SolverOptions(max_iter=task.max_iter, tol=task.tol)
    pf_report = ddp.solve(model, coeffs.coeffs, spec, options)

    state_spec = ddp.OcpSpec(
        H=steps,
        dt=dt,
        S=task.stage_mean_weight * np.eye(d),
        R=task.control_weight * np.eye(_control_dim(cfg)),
        S_H=task.terminal_mean_weight * np.eye(d),
        y_ref=np.tile(task.target_mean, (steps + 1, 1)),
    )
    state_report = ddp.solve_state_ddp(system, cfg.initial_density.mean, state_spec, options)

    ensemble = validation.sample_gaussian(
        cfg.initial_density.mean, cfg.initial_density.cov, n_samples, cfg.validation.seed
    )
    summary = {
        "stage": "compare-baselines",
        "rng": RNG_ALGORITHM,
        "seed": cfg.validation.seed,
        "n_samples": n_samples,
        "target_mean": task.target_mean.tolist(),
        "pf_ddp": {
            "converged": pf_report.converged,
            "iterations": pf_report.iterations,
            **_final_sample_stats(system, ensemble, pf_report.controls, dt, task.target_mean),
        },
        "state_ddp": {
            "converged": state_report.converged,
            "iterations": state_report.iterations,
            **_final_sample_stats(system, ensemble, state_report.controls, dt, task.target_mean),
        },
    }
    _write_summary(cfg, summary, name="compare_summary.json")
    return summary


def run_all(cfg: ExperimentConfig) -> dict:
    """estimate -> (predict | control + validate); returns the merged summary."""
    est = run_estimate(cfg)
    if isinstance(cfg.task, PredictTask):
        stage = run_predict(cfg)
        merged = {"estimate": est, "predict": stage}
    else:
        stage = run_control(cfg)
        val = run_validate(cfg)
        merged = {"estimate": est, "control": stage, "validate": val}
    _write_summary(cfg, merged)
    return merged


def _write_summary(cfg: ExperimentConfig, summary: dict, name: str = SUMMARY_FILE) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / name
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
