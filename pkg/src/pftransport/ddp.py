"""Differential dynamic programming (iLQR variant) for moment tracking.

The same machinery solves two problem classes: output tracking on the lifted
bilinear density model, and state-space tracking on the raw control-affine
dynamics (the standard-DDP baseline).  The backward pass is a Riccati-like
recursion on the linearized step — augmented with the exact control-state
and control-control curvature of the step for the lifted problem, where the
bilinear structure makes those terms available in closed form; the forward
pass is a line-searched rollout with state feedback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlAffineSystem, DivergenceError, rk4_step
from .estimation import GeneratorModel
from .lifted import LiftedTrajectory, Rk4StepFamily

__all__ = [
    "OcpSpec",
    "SolveReport",
    "SolverOptions",
    "total_cost",
    "backward_pass",
    "forward_pass",
    "cost_gradient",
    "solve",
    "solve_state_ddp",
]


class NotPositiveDefiniteError(RuntimeError):
    """Q_uu failed its Cholesky factorization; caller should raise reg."""


@dataclass(frozen=True)
class OcpSpec:
    """Finite-horizon quadratic output-tracking problem.

    Cost convention over a trajectory with states s_0..s_H and controls
    u_0..u_{H-1}, outputs y_t:

        J = sum_{t=1}^{H-1} (y_t - ref_t)^T S (y_t - ref_t)
          + sum_{t=0}^{H-1} u_t^T R u_t
          + (y_H - ref_H)^T S_H (y_H - ref_H)

    The initial output error is a constant of the problem and carries no
    weight; every applied control is penalized.
    """

    H: int
    dt: float
    S: np.ndarray  # (p, p)
    R: np.ndarray  # (n_c, n_c)
    S_H: np.ndarray  # (p, p)
    y_ref: np.ndarray  # (H+1, p)
    u_init: np.ndarray | None = None

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        S_H = np.atleast_2d(np.asarray(self.S_H, dtype=float))
        y_ref = np.atleast_2d(np.asarray(self.y_ref, dtype=float))
        for name, M in (("S", S), ("R", R), ("S_H", S_H)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        if np.any(np.linalg.eigvalsh(S) < -1e-12) or np.any(np.linalg.eigvalsh(S_H) < -1e-12):
            raise ValueError("S and S_H must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(R) <= 0):
            raise ValueError("R must be positive definite")
        if y_ref.shape != (self.H + 1, S.shape[0]):
            raise ValueError(f"y_ref must have shape ({self.H + 1}, {S.shape[0]})")
        if self.u_init is not None:
            u0 = np.atleast_2d(np.asarray(self.u_init, dtype=float))
            if u0.shape[0] != self.H:
                raise ValueError("u_init must have H rows")
            object.__setattr__(self, "u_init", u0)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S_H", S_H)
        object.__setattr__(self, "y_ref", y_ref)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 200
    tol: float = 1e-8
    reg_init: float = 1e-6
    reg_min: float = 1e-10
    reg_max: float = 1e10
    alphas: tuple[float, ...] = tuple(0.5**i for i in range(11))
    accept_ratio: float = 1e-4
    verbose: bool = False


@dataclass(frozen=True)
class Gains:
    k: np.ndarray  # (H, n_c) feedforward
    K: np.ndarray  # (H, n_c, k) feedback
    expected_decrease_lin: float  # sum k^T Q_u (negative near descent)
    expected_decrease_quad: float  # sum k^T Q_uu k

    def expected_decrease(self, alpha: float = 1.0) -> float:
        return -(alpha * self.expected_decrease_lin
                 + 0.5 * alpha**2 * self.expected_decrease_quad)


@dataclass
class SolveReport:
    controls: np.ndarray
    trajectory: LiftedTrajectory
    cost_history: list[float]
    converged: bool
    iterations: int
    regularization_final: float


class _Problem:
    """Bundle of step dynamics, linearization, and output map for DDP."""

    def __init__(self, step_fn, linearize_fn, output_map, second_order=None):
        self.step = step_fn
        self.linearize = linearize_fn  # (x, u) -> (A, B)
        self.C = output_map  # (p, n) output matrix
        # optional (x, u, V_x) -> (dQ_ux, dQ_uu) curvature contributions
        self.second_order = second_order


def _lifted_problem(model: GeneratorModel, dt: float) -> _Problem:
    family = Rk4StepFamily(model, dt)

    def step_fn(x, u):
        out = family.apply(u, x)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(0, state=out)
        return out

    def linearize_fn(x, u):
        return family.matrix(u), family.control_jacobian(u, x)

    def second_order_fn(x, u, V_x):
        # The step is A(u) x, so f_ux = dA/du_i and f_uu = d2A/du_i du_j x;
        # both contract exactly against the value gradient.  Keeping these
        # terms (full DDP rather than Gauss-Newton) matters on strongly
        # bilinear problems, where the pure iLQR step stalls in long valleys.
        dA = family.matrix_control_derivatives(u)
        dQ_ux = np.tensordot(dA, V_x, axes=(1, 0))
        dQ_uu = family.control_hessian_apply(u, x) @ V_x
        return dQ_ux, dQ_uu

    return _Problem(step_fn, linearize_fn, model.C, second_order_fn)


def _state_problem(system: ControlAffineSystem, dt: float) -> _Problem:
    d, n_c = system.state_dim, system.control_dim

    def step_fn(x, u):
        out = rk4_step(lambda s: system.field(s, u), x, dt)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(0, state=out)
        return out

    def linearize_fn(x, u):
        # Central differences on the one-step map; exact for linear dynamics.
        A = np.empty((d, d))
        hx = 1e-6 * max(1.0, float(np.max(np.abs(x))))
        for i in range(d):
            e = np.zeros(d)
            e[i] = hx
            A[:, i] = (step_fn(x + e, u) - step_fn(x - e, u)) / (2.0 * hx)
        B = np.empty((d, n_c))
        hu = 1e-6 * max(1.0, float(np.max(np.abs(u))))
        for i in range(n_c):
            e = np.zeros(n_c)
            e[i] = hu
            B[:, i] = (step_fn(x, u + e) - step_fn(x, u - e)) / (2.0 * hu)
        return A, B

    return _Problem(step_fn, linearize_fn, np.eye(d))


def _rollout(problem: _Problem, x0: np.ndarray, controls: np.ndarray, dt: float) -> LiftedTrajectory:
    H = controls.shape[0]
    states = np.empty((H + 1, x0.shape[0]))
    states[0] = x0
    for t in range(H):
        try:
            states[t + 1] = problem.step(states[t], controls[t])
        except DivergenceError as exc:
            raise DivergenceError(t, state=exc.state) from None
    outputs = states @ problem.C.T
    return LiftedTrajectory(states, np.array(controls, dtype=float), outputs, dt)


def total_cost(spec: OcpSpec, traj: LiftedTrajectory) -> float:
    """Quadratic tracking cost of a trajectory under the spec's convention."""
    y = traj.outputs
    u = traj.controls
    if y.shape[0] != spec.H + 1 or y.shape[1] != spec.S.shape[0]:
        raise ValueError("trajectory does not match spec dimensions")
    err = y - spec.y_ref
    J = 0.0
    for t in range(1, spec.H):
        J += float(err[t] @ spec.S @ err[t])
    for t in range(spec.H):
        J += float(u[t] @ spec.R @ u[t])
    J += float(err[spec.H] @ spec.S_H @ err[spec.H])
    return J


def _backward(problem: _Problem, spec: OcpSpec, traj: LiftedTrajectory, reg: float) -> Gains:
    C = problem.C
    H = spec.H
    err = traj.outputs - spec.y_ref
    CtSC = 2.0 * C.T @ spec.S @ C
    CtS_HC = 2.0 * C.T @ spec.S_H @ C

    n_c = spec.R.shape[0]
    n = traj.states.shape[1]
    k_ff = np.empty((H, n_c))
    K_fb = np.empty((H, n_c, n))
    d1 = 0.0
    d2 = 0.0

    V_x = 2.0 * C.T @ (spec.S_H @ err[H])
    V_xx = CtS_HC.copy()
    for t in range(H - 1, -1, -1):
        A, B = problem.linearize(traj.states[t], traj.controls[t])
        Q_x = A.T @ V_x
        Q_u = 2.0 * spec.R @ traj.controls[t] + B.T @ V_x
        VA = V_xx @ A
        Q_xx = A.T @ VA
        Q_ux = B.T @ VA
        Q_uu = 2.0 * spec.R + B.T @ (V_xx @ B)
        if problem.second_order is not None:
            dQ_ux, dQ_uu = problem.second_order(traj.states[t], traj.controls[t], V_x)
            Q_ux = Q_ux + dQ_ux
            Q_uu = Q_uu + 0.5 * (dQ_uu + dQ_uu.T)
        if t >= 1:
            Q_x = Q_x + 2.0 * C.T @ (spec.S @ err[t])
            Q_xx = Q_xx + CtSC
        Q_uu_reg = Q_uu + reg * np.eye(n_c)
        try:
            chol = np.linalg.cholesky(0.5 * (Q_uu_reg + Q_uu_reg.T))
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(f"Q_uu not PD at step {t} (reg={reg:g})")
        rhs = np.column_stack([Q_u, Q_ux])
        sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        kt = -sol[:, 0]
        Kt = -sol[:, 1:]
        k_ff[t] = kt
        K_fb[t] = Kt
        d1 += float(kt @ Q_u)
        d2 += float(kt @ Q_uu_reg @ kt)
        V_x = Q_x + Kt.T @ (Q_uu_reg @ kt) + Kt.T @ Q_u + Q_ux.T @ kt
        V_xx = Q_xx + Kt.T @ (Q_uu_reg @ Kt) + Kt.T @ Q_ux + Q_ux.T @ Kt
        V_xx = 0.5 * (V_xx + V_xx.T)
    return Gains(k_ff, K_fb, d1, d2)


def _forward(
    problem: _Problem,
    spec: OcpSpec,
    traj: LiftedTrajectory,
    gains: Gains,
    alpha: float,
) -> tuple[LiftedTrajectory, float]:
    H = spec.H
    n = traj.states.shape[1]
    states = np.empty((H + 1, n))
    controls = np.empty_like(traj.controls)
    states[0] = traj.states[0]
    for t in range(H):
        du = alpha * gains.k[t] + gains.K[t] @ (states[t] - traj.states[t])
        controls[t] = traj.controls[t] + du
        try:
            states[t + 1] = problem.step(states[t], controls[t])
        except DivergenceError as exc:
            raise DivergenceError(t, state=exc.state) from None
    outputs = states @ problem.C.T
    new_traj = LiftedTrajectory(states, controls, outputs, traj.dt)
    return new_traj, total_cost(spec, new_traj)


def _adjoint_gradient(problem: _Problem, spec: OcpSpec, traj: LiftedTrajectory) -> np.ndarray:
    """Exact gradient of total_cost with respect to the open-loop controls."""
    C = problem.C
    H = spec.H
    err = traj.outputs - spec.y_ref
    grad = np.empty_like(traj.controls)
    lam = 2.0 * C.T @ (spec.S_H @ err[H])
    for t in range(H - 1, -1, -1):
        A, B = problem.linearize(traj.states[t], traj.controls[t])
        grad[t] = 2.0 * spec.R @ traj.controls[t] + B.T @ lam
        lam = A.T @ lam
        if t >= 1:
            lam = lam + 2.0 * C.T @ (spec.S @ err[t])
    return grad


def _solve(
    problem: _Problem,
    x0: np.ndarray,
    spec: OcpSpec,
    options: SolverOptions,
) -> SolveReport:
    n_c = spec.R.shape[0]
    u = (
        np.array(spec.u_init, dtype=float)
        if spec.u_init is not None
        else np.zeros((spec.H, n_c))
    )
    traj = _rollout(problem, np.asarray(x0, dtype=float), u, spec.dt)
    J = total_cost(spec, traj)
    history = [J]
    reg = options.reg_init
    converged = False
    iterations = 0

    for iterations in range(1, options.max_iter + 1):
        gains = None
        while gains is None:
            try:
                gains = _backward(problem, spec, traj, reg)
            except NotPositiveDefiniteError:
                if reg >= options.reg_max:
                    return SolveReport(traj.controls, traj, history, False, iterations, reg)
                reg = min(reg * 10.0, options.reg_max)

        accepted = False
        for alpha in options.alphas:
            try:
                new_traj, J_new = _forward(problem, spec, traj, gains, alpha)
            except DivergenceError:
                continue
            expected = gains.expected_decrease(alpha)
            if expected > 0:
                if J - J_new >= options.accept_ratio * expected:
                    accepted = True
                    break
            elif J_new < J:
                accepted = True
                break
        if accepted:
            delta = J - J_new
            traj, J = new_traj, J_new
            history.append(J)
            if options.verbose:
                print(f"iter {iterations:3d}  cost {J:.6e}  alpha {alpha:g}  reg {reg:g}",
                      flush=True)
            reg = max(reg / 2.0, options.reg_min)
            if abs(delta) < options.tol * (1.0 + abs(J)):
                converged = True
                break
        else:
            if options.verbose:
                print(f"iter {iterations:3d}  rejected  cost {J:.6e}  reg {reg:g}",
                      flush=True)
            if gains.expected_decrease(1.0) < options.tol * (1.0 + abs(J)):
                converged = True
                break
            if reg >= options.reg_max:
                break
            reg = min(reg * 10.0, options.reg_max)

    return SolveReport(traj.controls, traj, history, converged, iterations, reg)


# -- public API --------------------------------------------------------------


def backward_pass(
    model: GeneratorModel,
    spec: OcpSpec,
    traj: LiftedTrajectory,
    reg: float = 0.0,
) -> Gains:
    """Riccati-like recursion on the linearized lifted step about ``traj``."""
    return _backward(_lifted_problem(model, spec.dt), spec, traj, reg)


def forward_pass(
    model: GeneratorModel,
    spec: OcpSpec,
    traj: LiftedTrajectory,
    gains: Gains,
    alpha: float = 1.0,
) -> tuple[LiftedTrajectory, float]:
    """Line-searched rollout applying the backward-pass gains."""
    return _forward(_lifted_problem(model, spec.dt), spec, traj, gains, alpha)


def cost_gradient(
    model: GeneratorModel,
    spec: OcpSpec,
    traj: LiftedTrajectory,
) -> np.ndarray:
    """Gradient of the total cost with respect to the control sequence."""
    return _adjoint_gradient(_lifted_problem(model, spec.dt), spec, traj)


def solve(
    model: GeneratorModel,
    rho0: np.ndarray,
    spec: OcpSpec,
    options: SolverOptions | None = None,
) -> SolveReport:
    """DDP solve of the moment-tracking problem on the lifted bilinear model."""
    if spec.S.shape[0] != model.output_dim or spec.R.shape[0] != model.control_dim:
        raise ValueError("spec dimensions do not match model")
    return _solve(_lifted_problem(model, spec.dt), rho0, spec, options or SolverOptions())


def solve_state_ddp(
    system: ControlAffineSystem,
    x0: np.ndarray,
    spec: OcpSpec,
    options: SolverOptions | None = None,
) -> SolveReport:
    """Standard DDP on the raw state dynamics, tracking the state directly."""
    if spec.S.shape[0] != system.state_dim or spec.R.shape[0] != system.control_dim:
        raise ValueError("spec dimensions do not match system")
    return _solve(_state_problem(system, spec.dt), x0, spec, options or SolverOptions())
