"""Oracle helpers shared between the unit-test and acceptance-test modules."""

import numpy as np
from scipy import integrate as scipy_integrate

from pftransport import basis
from pftransport.estimation import GeneratorModel


def quad_moment(center, width, which):
    """Adaptive-quadrature oracle for int x^which * psi(x) dx over R^2.

    ``which`` is a pair of exponents (a, b) for x1^a x2^b.
    """
    a, b = which
    span = 14.0 * width

    def f(x2, x1):
        r2 = (x1 - center[0]) ** 2 + (x2 - center[1]) ** 2
        return x1**a * x2**b * np.exp(-r2 / width**2)

    val, err = scipy_integrate.dblquad(
        f,
        center[0] - span, center[0] + span,
        lambda _: center[1] - span, lambda _: center[1] + span,
        epsabs=1e-12, epsrel=1e-12,
    )
    return val


def lq_tracking_oracle(F, g, C, x0, spec):
    """Directly minimized linear-quadratic tracking problem.

    Dynamics x_{t+1} = F x_t + g u_t with scalar control; the optimum is the
    solution of a stacked weighted least-squares system, solved here without
    any Riccati recursion so it is independent of the DDP implementation.
    """
    H = spec.H
    n = x0.shape[0]
    # x_t = F^t x0 + sum_{j<t} F^{t-1-j} g u_j
    const = [x0]
    for _ in range(H):
        const.append(F @ const[-1])
    lin = np.zeros((H + 1, n, H))
    for t in range(1, H + 1):
        for j in range(t):
            lin[t][:, j] = np.linalg.matrix_power(F, t - 1 - j) @ g
    rows, rhs = [], []

    def add(W, M, b):
        L = np.linalg.cholesky(W).T
        rows.append(L @ M)
        rhs.append(L @ b)

    for t in range(1, H):
        add(spec.S, C @ lin[t], spec.y_ref[t] - C @ const[t])
    add(spec.S_H, C @ lin[H], spec.y_ref[H] - C @ const[H])
    add(np.kron(spec.R, np.eye(H)), np.eye(H), np.zeros(H))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    u, *_ = np.linalg.lstsq(A, b, rcond=None)
    return u


def affine_lifted_model(seed, k_grid=3):
    """Lifted model whose control generator reads only a frozen coordinate.

    The last coefficient stays constant along any rollout, and every product
    of two control generators vanishes, so the one-step map is exactly linear
    in the control: an LQ problem in disguise.
    """
    rng = np.random.default_rng(seed)
    lo, hi = [-1.5, -1.5], [1.5, 1.5]
    d = basis.build_rbf_grid(lo, hi, k_grid, basis.default_width(lo, hi, k_grid))
    k = d.size
    L0 = 0.4 * rng.normal(size=(k, k)) / np.sqrt(k)
    L0[-1, :] = 0.0
    b = rng.normal(size=k)
    b[-1] = 0.0
    B = np.outer(b, np.eye(k)[-1])
    model = GeneratorModel(L0, (B,), basis.moment_matrix(d), d, 0.005)
    rho0 = rng.normal(size=k)
    rho0[-1] = 1.0
    return model, rho0
