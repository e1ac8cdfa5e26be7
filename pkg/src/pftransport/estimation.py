"""EDMD estimation of the density-propagation matrix and its generators.

The propagation matrix solves the least-squares problem

    min_P || Psi_Y Psi_X^T - Psi_X Psi_X^T P ||

over snapshot pairs (X, Y) where each column of Y is the small-time flow of
the matching column of X.  The generator is recovered by the finite
difference (P - I)/dt.  For control-affine dynamics the drift generator and
each control generator are estimated from their vector fields separately;
additivity of generators makes the lifted model the sum of the pieces.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .basis import Dictionary, moment_matrix
from .dynamics import ControlAffineSystem, DivergenceError, rk4_step

__all__ = [
    "SnapshotSet",
    "GeneratorModel",
    "collect_snapshots",
    "estimate_pf_matrix",
    "koopman_matrix",
    "generator_from_pf",
    "estimate_generator",
    "build_generator_model",
    "save_model",
    "load_model",
]

#: Relative singular-value cutoff used when reg == 0 (bare pseudoinverse).
PINV_RCOND = 1e-12


@dataclass(frozen=True)
class SnapshotSet:
    """Paired state snapshots: Y columns are the dt-flow of X columns."""

    X: np.ndarray  # (d, m)
    Y: np.ndarray  # (d, m)
    dt: float

    def __post_init__(self):
        if self.X.shape != self.Y.shape:
            raise ValueError("X and Y must have identical shape")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def count(self) -> int:
        return self.X.shape[1]


def collect_snapshots(
    field: Callable[[np.ndarray], np.ndarray],
    ics: np.ndarray,
    dt: float,
    keep: Callable[[np.ndarray], bool] | None = None,
) -> SnapshotSet:
    """Single-RK4-step snapshot pairs from a grid of initial conditions.

    ``ics`` holds initial states as rows (m, d).  ``keep`` optionally filters
    initial conditions (e.g. to avoid flow singularities).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    if keep is not None:
        ics = ics[[bool(keep(x)) for x in ics]]
    if ics.shape[0] == 0:
        raise ValueError("no initial conditions remain after filtering")
    Y = rk4_step(field, ics, dt)
    bad = ~np.all(np.isfinite(Y), axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise DivergenceError(0, state=ics[idx])
    return SnapshotSet(ics.T.copy(), Y.T.copy(), dt)


def _gram_and_cross(snapshots: SnapshotSet, dictionary: Dictionary):
    Psi_X = dictionary.eval_many(snapshots.X.T)
    Psi_Y = dictionary.eval_many(snapshots.Y.T)
    G = Psi_X @ Psi_X.T
    return Psi_X, Psi_Y, G


def default_regularization(G: np.ndarray) -> float:
    """Default Tikhonov weight 1e-4 * trace(G)/k.

    Much smaller weights leave spurious growing modes in the estimated
    generators that wreck multi-second rollouts; this level keeps short-time
    estimates accurate while damping the noise directions of the
    near-singular RBF Gram matrix.
    """
    return 1e-4 * float(np.trace(G)) / G.shape[0]


def estimate_pf_matrix(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    reg: float | None = None,
) -> np.ndarray:
    """EDMD estimate of the density-propagation matrix P.

    With reg > 0 solves (G + reg I) P = Psi_Y Psi_X^T; with reg == 0 uses the
    pseudoinverse with a relative singular-value cutoff.  ``reg=None`` picks
    the trace-scaled default.
    """
    Psi_X, Psi_Y, G = _gram_and_cross(snapshots, dictionary)
    A = Psi_Y @ Psi_X.T
    if reg is None:
        reg = default_regularization(G)
    if reg > 0:
        Greg = G.copy()
        Greg[np.diag_indices_from(Greg)] += reg
        return np.linalg.solve(Greg, A)
    return np.linalg.pinv(G, rcond=PINV_RCOND) @ A


def koopman_matrix(
    snapshots: SnapshotSet,
    dictionary: Dictionary,
    reg: float | None = None,
) -> np.ndarray:
    """EDMD estimate of the observable-propagation (Koopman) matrix."""
    Psi_X, Psi_Y, G = _gram_and_cross(snapshots, dictionary)
    A = Psi_X @ Psi_Y.T
    if reg is None:
        reg = default_regularization(G)
    if reg > 0:
        Greg = G.copy()
        Greg[np.diag_indices_from(Greg)] += reg
        return np.linalg.solve(Greg, A)
    return np.linalg.pinv(G, rcond=PINV_RCOND) @ A


def generator_from_pf(P: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference generator (P - I)/dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (P - np.eye(P.shape[0])) / dt


def estimate_generator(
    field: Callable[[np.ndarray], np.ndarray],
    dictionary: Dictionary,
    ics: np.ndarray,
    dt: float,
    reg: float | None = None,
    keep: Callable[[np.ndarray], bool] | None = None,
) -> np.ndarray:
    """Generator matrix of an autonomous vector field via EDMD."""
    snapshots = collect_snapshots(field, ics, dt, keep=keep)
    P = estimate_pf_matrix(snapshots, dictionary, reg=reg)
    return generator_from_pf(P, snapshots.dt)


@dataclass(frozen=True)
class GeneratorModel:
    """Lifted bilinear density-transport model.

    The coefficient dynamics are d rho_hat/dt = L0 rho_hat + sum_i u_i B_i
    rho_hat, with moment outputs y = C rho_hat.
    """

    L0: np.ndarray  # (k, k)
    B: tuple[np.ndarray, ...]  # n_c matrices, each (k, k)
    C: np.ndarray  # (p, k)
    dictionary: Dictionary
    dt_data: float

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(np.asarray(b, dtype=float) for b in self.B))
        k = self.dictionary.size
        if self.L0.shape != (k, k):
            raise ValueError("L0 must be k x k")
        for b in self.B:
            if b.shape != (k, k):
                raise ValueError("every B_i must be k x k")
        if self.C.shape[1] != k:
            raise ValueError("C column count must equal k")
        if not (
            np.all(np.isfinite(self.L0))
            and np.all(np.isfinite(self.C))
            and all(np.all(np.isfinite(b)) for b in self.B)
        ):
            raise ValueError("model matrices must be finite")

    @property
    def size(self) -> int:
        return self.dictionary.size

    @property
    def control_dim(self) -> int:
        return len(self.B)

    @property
    def output_dim(self) -> int:
        return self.C.shape[0]


def conserve_mass_projection(L: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Rank-one correction enforcing w^T L = 0 (total mass invariant).

    The exact generator of any flow conserves total mass; the EDMD estimate
    only does so approximately, and the residual compounds over long
    rollouts.
    """
    w = np.asarray(w, dtype=float).ravel()
    return L - np.outer(w, w @ L) / float(w @ w)


def build_generator_model(
    system: ControlAffineSystem,
    dictionary: Dictionary,
    ics: np.ndarray,
    dt: float,
    reg: float | None = None,
    keep: Callable[[np.ndarray], bool] | None = None,
    conserve_mass: bool = True,
    symmetrize_controls: bool = True,
) -> GeneratorModel:
    """Estimate drift and control generators from the system's vector fields.

    Each generator is estimated independently from snapshots of its own
    autonomous field (drift for L0, each control field for B_i); additivity
    of the generators justifies summing the pieces in the lifted dynamics.
    With ``conserve_mass`` each generator is projected onto the
    mass-conserving subspace.

    With ``symmetrize_controls`` each B_i is the odd part of the estimates
    for the field and its negation, (L[+g] - L[-g]) / 2.  The regularized
    least squares introduces a small sign-independent dissipative bias; a
    control generator carries that bias with the sign of the applied control,
    so for negative controls it turns anti-dissipative and long rollouts
    blow up.  The true generator is odd in the field, the bias is even, so
    the odd part keeps the former and cancels the latter.
    """
    from .basis import mass_vector

    L0 = estimate_generator(system.drift, dictionary, ics, dt, reg=reg, keep=keep)
    B = []
    for g in system.control_fields:
        Bi = estimate_generator(g, dictionary, ics, dt, reg=reg, keep=keep)
        if symmetrize_controls:
            Bi_neg = estimate_generator(
                lambda x, g=g: -g(x), dictionary, ics, dt, reg=reg, keep=keep)
            Bi = 0.5 * (Bi - Bi_neg)
        B.append(Bi)
    if conserve_mass:
        w = mass_vector(dictionary)
        L0 = conserve_mass_projection(L0, w)
        B = [conserve_mass_projection(b, w) for b in B]
    return GeneratorModel(L0, tuple(B), moment_matrix(dictionary), dictionary, dt)


def save_model(model: GeneratorModel, path: str | Path) -> None:
    """Write a model as a zip of a JSON header plus raw float64 arrays.

    Round trips are bit exact: arrays are stored little-endian float64 and
    the dictionary header carries full-precision floats.
    """
    path = Path(path)
    header = {
        "format": "pftransport-model-v1",
        "k": model.size,
        "control_dim": model.control_dim,
        "output_dim": model.output_dim,
        "dt_data": model.dt_data,
        "dictionary": {
            "centers_shape": list(model.dictionary.centers.shape),
            "width": model.dictionary.width,
        },
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=2))
        zf.writestr("centers.f64", model.dictionary.centers.astype("<f8").tobytes())
        zf.writestr("L0.f64", model.L0.astype("<f8").tobytes())
        for i, b in enumerate(model.B):
            zf.writestr(f"B{i}.f64", b.astype("<f8").tobytes())
        zf.writestr("C.f64", model.C.astype("<f8").tobytes())


def load_model(path: str | Path) -> GeneratorModel:
    path = Path(path)
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != "pftransport-model-v1":
            raise ValueError(f"unrecognized model file format in {path}")
        k = header["k"]
        p = header["output_dim"]
        cshape = tuple(header["dictionary"]["centers_shape"])

        def arr(name, shape):
            return np.frombuffer(zf.read(name), dtype="<f8").reshape(shape).copy()

        centers = arr("centers.f64", cshape)
        dictionary = Dictionary(centers, float(header["dictionary"]["width"]))
        L0 = arr("L0.f64", (k, k))
        B = tuple(arr(f"B{i}.f64", (k, k)) for i in range(header["control_dim"]))
        C = arr("C.f64", (p, k))
    return GeneratorModel(L0, B, C, dictionary, float(header["dt_data"]))
