"""Benchmark control-affine vector fields and a fixed-step RK4 integrator.

All vector fields operate on the last axis of their input, so a field can be
evaluated on a single state of shape ``(d,)`` or on a batch of shape
``(n, d)`` without modification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ControlAffineSystem",
    "RotorConfig",
    "DivergenceError",
    "SingularityError",
    "duffing_field",
    "duffing_system",
    "rotlet_field",
    "rotlet_system",
    "rk4_step",
    "integrate",
    "integrate_batch",
]


class DivergenceError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, step: int, state=None):
        super().__init__(f"integration diverged at step {step}")
        self.step = step
        self.state = state


class SingularityError(ValueError):
    """Raised when a field is evaluated inside a singularity exclusion zone."""


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics of the form dx/dt = f(x) + sum_i u_i g_i(x).

    ``drift`` and each entry of ``control_fields`` map states to state
    derivatives, acting on the last axis.  ``drift_jac`` and
    ``control_field_jacs`` (optional) return the (d, d) Jacobian at a single
    state and are required only by consumers that linearize the dynamics.
    """

    state_dim: int
    control_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    control_fields: Sequence[Callable[[np.ndarray], np.ndarray]]
    drift_jac: Callable[[np.ndarray], np.ndarray] | None = None
    control_field_jacs: Sequence[Callable[[np.ndarray], np.ndarray]] | None = None

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 0:
            raise ValueError("state_dim must be >= 1 and control_dim >= 0")
        if len(self.control_fields) != self.control_dim:
            raise ValueError("control_fields length must equal control_dim")

    def field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Full vector field f(x) + sum_i u_i g_i(x)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        dx = self.drift(x)
        for ui, g in zip(u, self.control_fields):
            if ui != 0.0:
                dx = dx + ui * g(x)
        return dx

    def jacobian(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Jacobian of the full field at a single state."""
        if self.drift_jac is None or (
            self.control_dim > 0 and self.control_field_jacs is None
        ):
            raise ValueError("system does not provide analytic Jacobians")
        u = np.atleast_1d(np.asarray(u, dtype=float))
        J = self.drift_jac(x).copy()
        for ui, gj in zip(u, self.control_field_jacs or []):
            J += ui * gj(x)
        return J


def duffing_field(x, u):
    """Unforced-potential Duffing dynamics (x2, x1 - x1^3 + u)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, x1 - x1**3 + u], axis=-1)


def _duffing_drift(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, x1 - x1**3], axis=-1)


def _duffing_g(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[..., 1] = 1.0
    return out


def duffing_system() -> ControlAffineSystem:
    """Duffing oscillator in control-affine form with analytic Jacobians."""
    return ControlAffineSystem(
        state_dim=2,
        control_dim=1,
        drift=_duffing_drift,
        control_fields=[_duffing_g],
        drift_jac=lambda x: np.array([[0.0, 1.0], [1.0 - 3.0 * x[0] ** 2, 0.0]]),
        control_field_jacs=[lambda x: np.zeros((2, 2))],
    )


@dataclass(frozen=True)
class RotorConfig:
    """Planar micro-rotor locations with a singularity exclusion radius."""

    positions: np.ndarray  # (N_r, 2)
    exclusion_radius: float = 0.05

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 2:
            raise ValueError("rotor positions must be 2D points")
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                if np.allclose(pos[i], pos[j]):
                    raise ValueError("rotor positions must be distinct")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return len(self.positions)


def _rotlet_single(x, position):
    """Velocity of a unit-torque rotlet at ``position``, no exclusion check."""
    r = np.asarray(x, dtype=float) - np.asarray(position, dtype=float)
    n3 = np.sum(r * r, axis=-1, keepdims=True) ** 1.5
    # z-hat cross r restricted to the plane
    perp = np.stack([-r[..., 1], r[..., 0]], axis=-1)
    return perp / n3


def rotlet_field(x, torques, rotors: RotorConfig):
    """Superposition of rotlet velocities, linear in the torques.

    Raises SingularityError if ``x`` lies within the exclusion radius of any
    rotor, where the 1/r^2 velocity magnitude diverges.
    """
    x = np.asarray(x, dtype=float)
    torques = np.atleast_1d(np.asarray(torques, dtype=float))
    if len(torques) != rotors.count:
        raise ValueError("torque vector length must match rotor count")
    out = np.zeros(np.broadcast_shapes(x.shape, (2,)), dtype=float)
    for T, pos in zip(torques, rotors.positions):
        r = x - pos
        dist = np.sqrt(np.sum(r * r, axis=-1))
        if np.any(dist < rotors.exclusion_radius):
            raise SingularityError(
                f"state within exclusion radius {rotors.exclusion_radius} of rotor at {pos}"
            )
        out += T * _rotlet_single(x, pos)
    return out


def _rotlet_jac(position):
    def jac(x):
        r = np.asarray(x, dtype=float) - position
        n2 = float(r @ r)
        n3 = n2**1.5
        n5 = n2**2.5
        r1, r2 = r
        return np.array(
            [
                [3.0 * r1 * r2 / n5, -1.0 / n3 + 3.0 * r2**2 / n5],
                [1.0 / n3 - 3.0 * r1**2 / n5, -3.0 * r1 * r2 / n5],
            ]
        )

    return jac


def rotlet_system(rotors: RotorConfig) -> ControlAffineSystem:
    """Stokes rotlet flow with one torque control per rotor and zero drift.

    Unlike :func:`rotlet_field`, the system's control fields cap the rotor
    distance from below at the exclusion radius instead of raising, so that
    batched ensemble integration survives individual samples straying near a
    rotor (those samples then trip the integrator's divergence policy rather
    than aborting the whole batch).
    """

    def make_g(pos, excl):
        def g(x):
            x = np.asarray(x, dtype=float)
            r = x - pos
            dist = np.sqrt(np.sum(r * r, axis=-1))
            capped = np.maximum(dist, excl)
            perp = np.stack([-r[..., 1], r[..., 0]], axis=-1)
            return perp / capped[..., None] ** 3

        return g

    fields = [make_g(p, rotors.exclusion_radius) for p in rotors.positions]
    return ControlAffineSystem(
        state_dim=2,
        control_dim=rotors.count,
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        control_fields=fields,
        drift_jac=lambda x: np.zeros((2, 2)),
        control_field_jacs=[_rotlet_jac(p) for p in rotors.positions],
    )


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of the autonomous field ``f``."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    system: ControlAffineSystem,
    x0: np.ndarray,
    controls: np.ndarray,
    dt: float,
    steps: int,
) -> np.ndarray:
    """Integrate with zero-order-hold controls; returns (steps+1, d) states.

    ``controls`` has shape (steps, control_dim); step t applies controls[t].
    """
    traj = integrate_batch(system, np.asarray(x0, dtype=float)[None, :], controls, dt, steps)
    return traj[:, 0, :]


def integrate_batch(
    system: ControlAffineSystem,
    x0: np.ndarray,
    controls: np.ndarray,
    dt: float,
    steps: int,
) -> np.ndarray:
    """Integrate a batch of initial states under one shared control signal.

    Returns an array of shape (steps+1, n, d).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    if steps > 0 and (controls.shape[0] < steps or controls.shape[1] != system.control_dim):
        raise ValueError(
            f"controls must have shape ({steps}, {system.control_dim}); got {controls.shape}"
        )
    out = np.empty((steps + 1,) + x0.shape, dtype=float)
    out[0] = x0
    x = x0
    for t in range(steps):
        u = controls[t]
        x = rk4_step(lambda s: system.field(s, u), x, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t, state=x)
        out[t + 1] = x
    return out
