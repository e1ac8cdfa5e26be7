"""Ground-truth Monte Carlo moment propagation and a linearized baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import moment_labels, second_moment_pairs
from .dynamics import ControlAffineSystem, rk4_step

__all__ = [
    "SampleEnsemble",
    "MomentSeries",
    "sample_gaussian",
    "raw_moments",
    "monte_carlo_moments",
    "linearized_moment_prediction",
    "moment_error",
    "write_moment_csv",
]

RNG_ALGORITHM = "numpy.random.default_rng (PCG64)"

#: Runs excluding more than this fraction of diverged samples are invalid.
MAX_EXCLUDED_FRACTION = 0.01


@dataclass(frozen=True)
class SampleEnsemble:
    """Reproducible i.i.d. draws from a Gaussian initial density."""

    samples: np.ndarray  # (n, d)
    seed: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def count(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class MomentSeries:
    """First and unique second raw moments on a shared time grid."""

    times: np.ndarray  # (H+1,)
    m1: np.ndarray  # (H+1, d)
    m2: np.ndarray  # (H+1, d(d+1)/2)
    excluded: int = 0

    @property
    def dim(self) -> int:
        return self.m1.shape[1]

    def stacked(self) -> np.ndarray:
        """Moments as rows (H+1, p) matching the lifted model's output order."""
        return np.hstack([self.m1, self.m2])


def sample_gaussian(mean, cov, n: int, seed: int) -> SampleEnsemble:
    """Draw n samples; degenerate (PSD) covariances are allowed."""
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if n < 1:
        raise ValueError("n must be at least 1")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    eigvals = np.linalg.eigvalsh(cov)
    if np.any(eigvals < -1e-12 * max(1.0, float(np.max(np.abs(eigvals))))):
        raise ValueError("covariance must be positive semidefinite")
    rng = np.random.default_rng(seed)
    samples = rng.multivariate_normal(mean, cov, size=n, method="eigh")
    return SampleEnsemble(samples, seed, mean, cov)


def raw_moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample first and unique second raw moments of rows (n, d)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    d = samples.shape[1]
    m1 = samples.mean(axis=0)
    pairs = second_moment_pairs(d)
    m2 = np.array([np.mean(samples[:, i] * samples[:, j]) for i, j in pairs])
    return m1, m2


def monte_carlo_moments(
    system: ControlAffineSystem,
    ensemble: SampleEnsemble,
    controls: np.ndarray,
    dt: float,
    divergence_threshold: float = 1e6,
) -> MomentSeries:
    """Propagate every sample under the shared control signal; raw moments per step.

    Samples whose norm exceeds ``divergence_threshold`` (or go non-finite)
    are excluded from that time onward; if more than MAX_EXCLUDED_FRACTION of
    the ensemble is excluded the run is rejected.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    if not np.all(np.isfinite(controls)):
        raise ValueError("controls must be finite")
    H = controls.shape[0]
    x = ensemble.samples.copy()
    n, d = x.shape
    alive = np.ones(n, dtype=bool)
    pairs = second_moment_pairs(d)

    m1 = np.empty((H + 1, d))
    m2 = np.empty((H + 1, len(pairs)))

    def record(t):
        xs = x[alive]
        m1[t] = xs.mean(axis=0)
        for row, (i, j) in enumerate(pairs):
            m2[t, row] = np.mean(xs[:, i] * xs[:, j])

    record(0)
    for t in range(H):
        u = controls[t]
        x[alive] = rk4_step(lambda s: system.field(s, u), x[alive], dt)
        with np.errstate(invalid="ignore"):
            bad = alive & (
                ~np.all(np.isfinite(x), axis=1)
                | (np.linalg.norm(np.nan_to_num(x), axis=1) > divergence_threshold)
            )
        alive &= ~bad
        excluded = n - int(alive.sum())
        if excluded > MAX_EXCLUDED_FRACTION * n:
            raise RuntimeError(
                f"{excluded}/{n} samples diverged by step {t}; run invalid"
            )
        record(t + 1)
    times = np.arange(H + 1) * dt
    return MomentSeries(times, m1, m2, excluded=n - int(alive.sum()))


def linearized_moment_prediction(
    system: ControlAffineSystem,
    mean0,
    cov0,
    controls: np.ndarray,
    dt: float,
) -> MomentSeries:
    """Gaussian moment propagation through a per-step relinearization.

    The mean follows the nonlinear field under RK4; the covariance advances
    as A Sigma A^T with A = I + dt J + dt^2 J^2 / 2 evaluated at the current
    mean, the a-priori update of an extended Kalman filter.
    """
    mean = np.asarray(mean0, dtype=float).copy()
    cov = np.atleast_2d(np.asarray(cov0, dtype=float)).copy()
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    H = controls.shape[0]
    d = mean.shape[0]
    pairs = second_moment_pairs(d)

    m1 = np.empty((H + 1, d))
    m2 = np.empty((H + 1, len(pairs)))

    def record(t):
        m1[t] = mean
        full = cov + np.outer(mean, mean)
        m2[t] = [full[i, j] for i, j in pairs]

    record(0)
    for t in range(H):
        u = controls[t]
        J = system.jacobian(mean, u)
        A = np.eye(d) + dt * J + 0.5 * dt**2 * (J @ J)
        cov = A @ cov @ A.T
        mean = rk4_step(lambda s: system.field(s, u), mean, dt)
        record(t + 1)
    times = np.arange(H + 1) * dt
    return MomentSeries(times, m1, m2)


def moment_error(a: MomentSeries, b: MomentSeries) -> dict:
    """Componentwise absolute errors between two series on the same grid."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise ValueError("moment series must share the same time grid")
    e1 = np.abs(a.m1 - b.m1)
    e2 = np.abs(a.m2 - b.m2)
    return {
        "m1_abs": e1,
        "m2_abs": e2,
        "m1_max": float(e1.max()),
        "m2_max": float(e2.max()),
        "m1_rms": float(np.sqrt(np.mean(e1**2))),
        "m2_rms": float(np.sqrt(np.mean(e2**2))),
    }


def write_moment_csv(path: str | Path, series: dict[str, MomentSeries]) -> None:
    """Moment series side by side: t, then <name>_m1_1, ... per series."""
    names = list(series)
    first = series[names[0]]
    for s in series.values():
        if s.times.shape != first.times.shape or not np.allclose(s.times, first.times):
            raise ValueError("all series must share the same time grid")
    labels = moment_labels(first.dim)
    header = ["t"] + [f"{name}_{lab}" for name in names for lab in labels]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(first.times.shape[0]):
            row = [repr(float(first.times[t]))]
            for name in names:
                s = series[name]
                row += [repr(float(v)) for v in s.stacked()[t]]
            writer.writerow(row)
