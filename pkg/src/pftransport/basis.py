"""Gaussian RBF dictionary: evaluation, moment integrals, density projection.

Basis element i is psi_i(x) = exp(-||x - c_i||^2 / sigma^2) with a width
sigma shared across the dictionary.  Moment integrals are taken over all of
R^d in closed form; with A = pi*sigma^2,

    int psi_i dx           = A^(d/2)
    int x_a psi_i dx       = c_{i,a} * A^(d/2)
    int x_a x_b psi_i dx   = (c_{i,a} c_{i,b} + delta_ab sigma^2/2) * A^(d/2)

Second moments are ordered as the upper triangle, row major:
(1,1), (1,2), ..., (1,d), (2,2), ..., (d,d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dictionary",
    "DensityCoefficients",
    "ProjectionReport",
    "build_rbf_grid",
    "second_moment_pairs",
    "moment_matrix",
    "mass_vector",
    "project_gaussian",
    "eval_density",
    "gaussian_density",
    "moment_labels",
]


@dataclass(frozen=True)
class Dictionary:
    """Immutable set of Gaussian RBF centers with shared width."""

    centers: np.ndarray  # (k, d)
    width: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if not np.all(np.isfinite(centers)):
            raise ValueError("centers must be finite")
        if self.width <= 0:
            raise ValueError("width must be positive")
        object.__setattr__(self, "centers", centers)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Evaluate all basis elements at a single point; returns (k,)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite evaluation point")
        d2 = np.sum((self.centers - x) ** 2, axis=1)
        return np.exp(-d2 / self.width**2)

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on points stacked as rows of X (m, d); returns (k, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite evaluation points")
        # ||c - x||^2 = ||c||^2 - 2 c.x + ||x||^2, computed blockwise
        c2 = np.sum(self.centers**2, axis=1)[:, None]
        x2 = np.sum(X**2, axis=1)[None, :]
        d2 = c2 - 2.0 * self.centers @ X.T + x2
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-d2 / self.width**2)

    def to_json(self) -> str:
        return json.dumps({"centers": self.centers.tolist(), "width": self.width})

    @staticmethod
    def from_json(text: str) -> "Dictionary":
        rec = json.loads(text)
        return Dictionary(np.asarray(rec["centers"], dtype=float), float(rec["width"]))


@dataclass(frozen=True)
class DensityCoefficients:
    """Coefficients of a density's projection onto the dictionary span."""

    coeffs: np.ndarray  # (k,)
    dictionary: Dictionary

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if coeffs.shape[0] != self.dictionary.size:
            raise ValueError("coefficient length must equal dictionary size")
        object.__setattr__(self, "coeffs", coeffs)


@dataclass(frozen=True)
class ProjectionReport:
    """Diagnostics of a least-squares density projection."""

    max_abs_error: float
    peak_value: float
    min_value: float
    mass: float


def build_rbf_grid(lower, upper, n_per_dim: int, width: float) -> Dictionary:
    """Dictionary with centers on a uniform grid including both endpoints.

    Ordering is row major by dimension: the last coordinate varies fastest.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ValueError("lower and upper must have the same dimension")
    if not np.all(upper > lower):
        raise ValueError("upper must exceed lower componentwise")
    if n_per_dim < 2:
        raise ValueError("n_per_dim must be at least 2")
    axes = [np.linspace(lo, hi, n_per_dim) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    return Dictionary(centers, width)


def grid_points(lower, upper, n_per_dim: int) -> np.ndarray:
    """Uniform grid of points, same ordering convention as build_rbf_grid."""
    return build_rbf_grid(lower, upper, n_per_dim, 1.0).centers


def default_width(lower, upper, n_per_dim: int) -> float:
    """Default RBF width: the largest grid spacing.

    Wider bumps give a smoother span but a much worse-conditioned Gram
    matrix; empirically long-horizon rollouts of the estimated generators
    degrade quickly for widths much beyond one grid spacing.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    spacing = (upper - lower) / (n_per_dim - 1)
    return float(np.max(spacing))


def second_moment_pairs(d: int) -> list[tuple[int, int]]:
    """Index pairs of the unique second raw moments, upper triangle row major."""
    return [(i, j) for i in range(d) for j in range(i, d)]


def moment_labels(d: int) -> list[str]:
    """Column labels matching the rows of moment_matrix."""
    labels = [f"m1_{i + 1}" for i in range(d)]
    labels += [f"m2_{i + 1}{j + 1}" for i, j in second_moment_pairs(d)]
    return labels


def mass_vector(dictionary: Dictionary) -> np.ndarray:
    """Integrals of each basis element over R^d; w^T rho_hat is total mass."""
    d = dictionary.dim
    return np.full(dictionary.size, (np.pi * dictionary.width**2) ** (d / 2.0))


def moment_matrix(dictionary: Dictionary) -> np.ndarray:
    """Output matrix C mapping coefficients to first and second raw moments.

    Shape is (d + d(d+1)/2, k): first the d first-moment rows, then the
    unique second-moment rows in upper-triangle row-major order.
    """
    c = dictionary.centers
    k, d = c.shape
    sigma2 = dictionary.width**2
    mass = (np.pi * sigma2) ** (d / 2.0)
    pairs = second_moment_pairs(d)
    C = np.empty((d + len(pairs), k))
    C[:d] = mass * c.T
    for row, (i, j) in enumerate(pairs):
        C[d + row] = mass * (c[:, i] * c[:, j] + (0.5 * sigma2 if i == j else 0.0))
    return C


def gaussian_density(x: np.ndarray, mean, cov) -> np.ndarray:
    """Multivariate normal pdf evaluated on rows of x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = np.linalg.solve(chol, (x - mean).T)
    q = np.sum(diff**2, axis=0)
    norm = (2.0 * np.pi) ** (d / 2.0) * np.prod(np.diag(chol))
    return np.exp(-0.5 * q) / norm


def project_gaussian(
    dictionary: Dictionary,
    mean,
    cov,
    quad_n: int = 100,
    reg: float = 1e-8,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[DensityCoefficients, ProjectionReport]:
    """Least-squares projection of a Gaussian density onto the dictionary span.

    The density is fit on a uniform quadrature grid over ``bounds`` (default:
    the dictionary's bounding box) with Tikhonov regularization ``reg``.
    Raises ValueError if the grid fails to cover the 4-sigma support of the
    target density.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance must be positive definite") from exc

    if bounds is None:
        lower = dictionary.centers.min(axis=0)
        upper = dictionary.centers.max(axis=0)
    else:
        lower = np.asarray(bounds[0], dtype=float)
        upper = np.asarray(bounds[1], dtype=float)

    radius = 4.0 * np.sqrt(np.diag(cov))
    if np.any(mean - radius < lower) or np.any(mean + radius > upper):
        raise ValueError("quadrature grid does not cover the density's 4-sigma support")

    pts = grid_points(lower, upper, quad_n)
    target = gaussian_density(pts, mean, cov)
    Phi = dictionary.eval_many(pts)  # (k, m)

    G = Phi @ Phi.T
    G[np.diag_indices_from(G)] += reg
    b = Phi @ target
    try:
        coeffs = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        coeffs, *_ = np.linalg.lstsq(G, b, rcond=1e-12)

    recon = Phi.T @ coeffs
    report = ProjectionReport(
        max_abs_error=float(np.max(np.abs(recon - target))),
        peak_value=float(np.max(target)),
        min_value=float(np.min(recon)),
        mass=float(mass_vector(dictionary) @ coeffs),
    )
    return DensityCoefficients(coeffs, dictionary), report


def eval_density(coeffs: DensityCoefficients, x: np.ndarray) -> float | np.ndarray:
    """Reconstructed density Psi^T(x) rho_hat at a point or batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return float(coeffs.dictionary.eval(x) @ coeffs.coeffs)
    return coeffs.dictionary.eval_many(x).T @ coeffs.coeffs
