"""Discrete-time dynamics of the lifted bilinear density-transport model.

One step with control held constant advances the frozen linear system
d rho_hat/dt = M(u) rho_hat with M(u) = L0 + sum_i u_i B_i, either by a
classical RK4 step (default) or by the exact matrix exponential.  Both are
linear in rho_hat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .basis import moment_labels
from .dynamics import DivergenceError
from .estimation import GeneratorModel

__all__ = [
    "LiftedTrajectory",
    "lifted_derivative",
    "control_matrix",
    "step",
    "rollout",
    "Rk4StepFamily",
    "write_trajectory_csv",
]

#: Inverse factorials of the degree-4 RK4 transition polynomial
#: Phi(Z) = I + Z + Z^2/2 + Z^3/6 + Z^4/24, Z = dt * M(u).
_RK4_COEFFS = (1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0)


@dataclass(frozen=True)
class LiftedTrajectory:
    """Rollout of coefficient states, applied controls, and moment outputs."""

    states: np.ndarray  # (H+1, k)
    controls: np.ndarray  # (H, n_c)
    outputs: np.ndarray  # (H+1, p)
    dt: float

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.dt


def control_matrix(model: GeneratorModel, u) -> np.ndarray:
    """Frozen system matrix M(u) = L0 + sum_i u_i B_i."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape[0] != model.control_dim:
        raise ValueError("control dimension mismatch")
    M = model.L0.copy()
    for ui, Bi in zip(u, model.B):
        if ui != 0.0:
            M += ui * Bi
    return M


def lifted_derivative(model: GeneratorModel, rho: np.ndarray, u) -> np.ndarray:
    """Time derivative (L0 + sum_i u_i B_i) rho."""
    rho = np.asarray(rho, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape[0] != model.control_dim:
        raise ValueError("control dimension mismatch")
    out = model.L0 @ rho
    for ui, Bi in zip(u, model.B):
        if ui != 0.0:
            out += ui * (Bi @ rho)
    return out


def step(
    model: GeneratorModel,
    rho: np.ndarray,
    u,
    dt: float,
    scheme: str = "rk4",
) -> np.ndarray:
    """Advance rho by one zero-order-hold step of length dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = np.asarray(rho, dtype=float)
    if scheme == "rk4":
        k1 = lifted_derivative(model, rho, u)
        k2 = lifted_derivative(model, rho + 0.5 * dt * k1, u)
        k3 = lifted_derivative(model, rho + 0.5 * dt * k2, u)
        k4 = lifted_derivative(model, rho + dt * k3, u)
        out = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    elif scheme == "expm":
        out = scipy.linalg.expm(control_matrix(model, u) * dt) @ rho
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(out)):
        raise DivergenceError(0, state=out)
    return out


def rollout(
    model: GeneratorModel,
    rho0: np.ndarray,
    controls: np.ndarray,
    dt: float,
    scheme: str = "rk4",
) -> LiftedTrajectory:
    """Iterate ``step`` over a control sequence of shape (H, n_c)."""
    rho0 = np.asarray(rho0, dtype=float).ravel()
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    if controls.size and controls.shape[1] != model.control_dim:
        raise ValueError("control dimension mismatch")
    H = controls.shape[0]
    states = np.empty((H + 1, model.size))
    states[0] = rho0
    for t in range(H):
        try:
            states[t + 1] = step(model, states[t], controls[t], dt, scheme=scheme)
        except DivergenceError as exc:
            raise DivergenceError(t, state=exc.state) from None
    outputs = states @ model.C.T
    return LiftedTrajectory(states, controls, outputs, dt)


class Rk4StepFamily:
    """One-step RK4 transition matrices as a polynomial in control monomials.

    The transition Phi(dt * M(u)) is a degree-4 matrix polynomial in u.
    Expanding it once into monomial coefficient matrices makes per-control
    evaluation a handful of scaled matrix additions instead of repeated
    matrix products, which is what makes the DDP backward pass affordable
    at dictionary sizes in the hundreds.
    """

    def __init__(self, model: GeneratorModel, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.dt = dt
        self.k = model.size
        self.n_c = model.control_dim
        zero = tuple([0] * self.n_c)
        # Z(u) = dt*L0 + sum_i u_i * dt*B_i as {exponent tuple: matrix}
        Z = {zero: dt * model.L0}
        for i, Bi in enumerate(model.B):
            e = list(zero)
            e[i] = 1
            Z[tuple(e)] = dt * Bi
        terms = {zero: _RK4_COEFFS[0] * np.eye(self.k)}
        power = Z
        self._accumulate(terms, power, _RK4_COEFFS[1])
        for c in _RK4_COEFFS[2:]:
            power = self._poly_mul(power, Z)
            self._accumulate(terms, power, c)
        self.exponents = sorted(terms.keys())
        self.coeff_mats = np.stack([terms[e] for e in self.exponents])
        self._exp_arr = np.array(self.exponents)  # (n_terms, n_c)

    @staticmethod
    def _poly_mul(p, q):
        out = {}
        for ea, A in p.items():
            for eb, Bm in q.items():
                e = tuple(x + y for x, y in zip(ea, eb))
                prod = A @ Bm
                if e in out:
                    out[e] += prod
                else:
                    out[e] = prod
        return out

    @staticmethod
    def _accumulate(terms, power, c):
        for e, A in power.items():
            if e in terms:
                terms[e] += c * A
            else:
                terms[e] = c * A

    def _monomials(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.prod(u[None, :] ** self._exp_arr, axis=1)

    def matrix(self, u) -> np.ndarray:
        """State transition A(u) = d step / d rho; exact, since the step is linear."""
        w = self._monomials(u)
        return np.tensordot(w, self.coeff_mats, axes=(0, 0))

    def apply(self, u, rho: np.ndarray) -> np.ndarray:
        """step(rho, u) without forming A(u): weighted sum of matvecs."""
        w = self._monomials(u)
        out = np.zeros_like(np.asarray(rho, dtype=float))
        for wi, A in zip(w, self.coeff_mats):
            if wi != 0.0:
                out += wi * (A @ rho)
        return out

    def control_jacobian(self, u, rho: np.ndarray) -> np.ndarray:
        """d step(rho, u) / d u, shape (k, n_c)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        rho = np.asarray(rho, dtype=float)
        out = np.zeros((self.k, self.n_c))
        for e, A in zip(self.exponents, self.coeff_mats):
            for i in range(self.n_c):
                if e[i] == 0:
                    continue
                w = e[i] * u[i] ** (e[i] - 1)
                for j in range(self.n_c):
                    if j != i:
                        w *= u[j] ** e[j]
                if w != 0.0:
                    out[:, i] += w * (A @ rho)
        return out

    def _monomial_derivative(self, u: np.ndarray, e, wrt: tuple[int, ...]) -> float:
        """Partial derivative of the monomial u^e with respect to ``wrt``."""
        exps = list(e)
        coeff = 1.0
        for i in wrt:
            if exps[i] == 0:
                return 0.0
            coeff *= exps[i]
            exps[i] -= 1
        w = coeff
        for j, ej in enumerate(exps):
            if ej:
                w *= u[j] ** ej
        return w

    def matrix_control_derivatives(self, u) -> np.ndarray:
        """dA(u)/du_i stacked over controls, shape (n_c, k, k)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        W = np.array([[self._monomial_derivative(u, e, (i,))
                       for e in self.exponents] for i in range(self.n_c)])
        return np.tensordot(W, self.coeff_mats, axes=(1, 0))

    def control_hessian_apply(self, u, rho: np.ndarray) -> np.ndarray:
        """d^2 step(rho, u) / du_i du_j as k-vectors, shape (n_c, n_c, k)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        rho = np.asarray(rho, dtype=float)
        Av = self.coeff_mats @ rho  # (n_terms, k)
        out = np.zeros((self.n_c, self.n_c, self.k))
        for i in range(self.n_c):
            for j in range(i, self.n_c):
                w = np.array([self._monomial_derivative(u, e, (i, j))
                              for e in self.exponents])
                vec = w @ Av
                out[i, j] = vec
                out[j, i] = vec
        return out


def write_trajectory_csv(traj: LiftedTrajectory, path: str | Path) -> None:
    """One row per timestep: t, controls (blank on the final row), outputs."""
    d_from_p = _state_dim_from_outputs(traj.outputs.shape[1])
    header = ["t"]
    header += [f"u_{i + 1}" for i in range(traj.controls.shape[1])]
    header += moment_labels(d_from_p)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.states.shape[0]):
            row = [repr(float(t * traj.dt))]
            if t < traj.horizon:
                row += [repr(float(v)) for v in traj.controls[t]]
            else:
                row += [""] * traj.controls.shape[1]
            row += [repr(float(v)) for v in traj.outputs[t]]
            writer.writerow(row)


def _state_dim_from_outputs(p: int) -> int:
    # p = d + d(d+1)/2 inverted over small d
    for d in range(1, 64):
        if d + d * (d + 1) // 2 == p:
            return d
    raise ValueError(f"output dimension {p} is not d + d(d+1)/2 for any small d")
