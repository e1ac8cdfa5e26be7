import json

import numpy as np
import pytest

from pftransport import basis
from pftransport.basis import (
    DensityCoefficients,
    Dictionary,
    build_rbf_grid,
    eval_density,
    mass_vector,
    moment_matrix,
    project_gaussian,
    second_moment_pairs,
)

from helpers import quad_moment


class TestBuildGrid:
    def test_paper_scale_grid(self):
        d = build_rbf_grid([-2.5, -2.5], [2.5, 2.5], 30, 0.2)
        assert d.size == 900
        assert np.allclose(d.centers[0], [-2.5, -2.5])
        assert np.allclose(d.centers[-1], [2.5, 2.5])

    def test_two_by_two(self):
        d = build_rbf_grid([0, 0], [1, 1], 2, 0.5)
        expected = {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}
        assert {tuple(c) for c in d.centers} == expected

    def test_one_dimensional(self):
        d = build_rbf_grid([0.0], [2.0], 3, 0.5)
        assert np.allclose(sorted(d.centers.ravel()), [0.0, 1.0, 2.0])

    def test_rejects_small_grid(self):
        with pytest.raises(ValueError):
            build_rbf_grid([0, 0], [1, 1], 1, 0.5)

    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            build_rbf_grid([1, 0], [0, 1], 3, 0.5)


class TestEval:
    def test_value_at_center(self):
        d = build_rbf_grid([0, 0], [1, 1], 2, 0.3)
        vals = d.eval(np.array([1.0, 0.0]))
        assert vals[np.argmax(vals)] == pytest.approx(1.0)

    def test_value_at_one_width(self):
        d = Dictionary(np.array([[0.0, 0.0]]), 0.7)
        assert d.eval(np.array([0.7, 0.0]))[0] == pytest.approx(np.exp(-1.0))

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        centers = rng.normal(size=(5, 2))
        shift = np.array([0.8, -1.3])
        d1 = Dictionary(centers, 0.5)
        d2 = Dictionary(centers + shift, 0.5)
        x = rng.normal(size=2)
        assert np.allclose(d1.eval(x), d2.eval(x + shift))

    def test_eval_many_matches_eval(self):
        rng = np.random.default_rng(4)
        d = Dictionary(rng.normal(size=(6, 2)), 0.4)
        X = rng.normal(size=(8, 2))
        stacked = d.eval_many(X)
        for j, x in enumerate(X):
            assert np.allclose(stacked[:, j], d.eval(x))


class TestMomentMatrix:
    def test_known_center(self):
        # d=2, sigma=1, center (1,2): int x1 psi = pi, int x1 x2 psi = 2 pi,
        # int x1^2 psi = 1.5 pi
        d = Dictionary(np.array([[1.0, 2.0]]), 1.0)
        C = moment_matrix(d)
        assert C[0, 0] == pytest.approx(np.pi)
        assert C[3, 0] == pytest.approx(2 * np.pi)  # (1,2) pair
        assert C[2, 0] == pytest.approx(1.5 * np.pi)  # (1,1) pair

    def test_center_at_origin_odd_symmetry(self):
        d = Dictionary(np.array([[0.0, 0.0]]), 0.8)
        C = moment_matrix(d)
        assert C[0, 0] == pytest.approx(0.0)
        assert C[1, 0] == pytest.approx(0.0)
        assert C[3, 0] == pytest.approx(0.0)

    def test_width_scaling_of_mass(self):
        d1 = Dictionary(np.array([[0.3, -0.2]]), 0.5)
        d2 = Dictionary(np.array([[0.3, -0.2]]), 1.0)
        assert mass_vector(d2)[0] / mass_vector(d1)[0] == pytest.approx(4.0)

    def test_against_quadrature_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            center = rng.uniform(-1, 1, size=2)
            width = rng.uniform(0.3, 1.2)
            d = Dictionary(center[None, :], width)
            C = moment_matrix(d)
            oracle = {
                0: quad_moment(center, width, (1, 0)),
                1: quad_moment(center, width, (0, 1)),
                2: quad_moment(center, width, (2, 0)),
                3: quad_moment(center, width, (1, 1)),
                4: quad_moment(center, width, (0, 2)),
            }
            for row, val in oracle.items():
                assert C[row, 0] == pytest.approx(val, rel=1e-8, abs=1e-10)

    def test_output_linearity(self):
        rng = np.random.default_rng(12)
        d = Dictionary(rng.normal(size=(5, 2)), 0.6)
        C = moment_matrix(d)
        r1, r2 = rng.normal(size=5), rng.normal(size=5)
        a, b = 1.7, -0.4
        lhs = C @ (a * r1 + b * r2)
        rhs = a * (C @ r1) + b * (C @ r2)
        assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


class TestProjection:
    def test_exact_basis_element(self):
        d = build_rbf_grid([-2, -2], [2, 2], 5, 1.0)
        i = 12
        scale = 1.0 / mass_vector(d)[i]
        # target density: scaled basis bump (unit mass)
        lo, hi = d.centers.min(axis=0), d.centers.max(axis=0)
        pts = basis.grid_points(lo, hi, 60)
        target = scale * d.eval_many(pts)[i]
        Phi = d.eval_many(pts)
        G = Phi @ Phi.T + 1e-10 * np.eye(d.size)
        coeffs = np.linalg.solve(G, Phi @ target)
        expected = np.zeros(d.size)
        expected[i] = scale
        assert np.allclose(coeffs, expected, atol=1e-8)

    def test_gaussian_reconstruction_quality(self):
        lo, hi = [-2.5, -2.5], [2.5, 2.5]
        d = build_rbf_grid(lo, hi, 30, basis.default_width(lo, hi, 30))
        coeffs, report = project_gaussian(d, [-0.5, 1.0], 0.05 * np.eye(2))
        assert report.max_abs_error <= 0.02 * report.peak_value
        assert report.mass == pytest.approx(1.0, abs=1e-2)

    def test_projected_moments_match_gaussian(self):
        lo, hi = [-2.5, -2.5], [2.5, 2.5]
        d = build_rbf_grid(lo, hi, 30, basis.default_width(lo, hi, 30))
        mean = np.array([-0.5, 1.0])
        cov = 0.05 * np.eye(2)
        coeffs, _ = project_gaussian(d, mean, cov)
        y = moment_matrix(d) @ coeffs.coeffs
        expected_m2 = [cov[i, j] + mean[i] * mean[j] for i, j in second_moment_pairs(2)]
        assert np.allclose(y[:2], mean, atol=1e-2)
        assert np.allclose(y[2:], expected_m2, atol=1e-2)

    def test_coverage_error(self):
        d = build_rbf_grid([-1, -1], [1, 1], 5, 0.5)
        with pytest.raises(ValueError):
            project_gaussian(d, [0.9, 0.0], 0.25 * np.eye(2))

    def test_non_spd_cov_rejected(self):
        d = build_rbf_grid([-1, -1], [1, 1], 5, 0.5)
        with pytest.raises(ValueError):
            project_gaussian(d, [0.0, 0.0], -0.1 * np.eye(2))


class TestEvalDensity:
    def test_zero_coefficients(self):
        d = build_rbf_grid([-1, -1], [1, 1], 3, 0.5)
        c = DensityCoefficients(np.zeros(d.size), d)
        assert eval_density(c, np.array([0.2, 0.4])) == 0.0

    def test_unit_vector_reproduces_basis(self):
        d = build_rbf_grid([-1, -1], [1, 1], 3, 0.5)
        e = np.zeros(d.size)
        e[4] = 1.0
        c = DensityCoefficients(e, d)
        x = np.array([0.15, -0.6])
        assert eval_density(c, x) == pytest.approx(d.eval(x)[4])

    def test_linearity(self):
        rng = np.random.default_rng(9)
        d = build_rbf_grid([-1, -1], [1, 1], 3, 0.5)
        r1, r2 = rng.normal(size=d.size), rng.normal(size=d.size)
        a, b = 0.6, -1.1
        x = rng.normal(size=2)
        lhs = eval_density(DensityCoefficients(a * r1 + b * r2, d), x)
        rhs = a * eval_density(DensityCoefficients(r1, d), x) \
            + b * eval_density(DensityCoefficients(r2, d), x)
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestSerialization:
    def test_dictionary_roundtrip_bit_exact(self):
        rng = np.random.default_rng(21)
        d = Dictionary(rng.normal(size=(7, 2)), 0.37)
        d2 = Dictionary.from_json(d.to_json())
        assert np.array_equal(d.centers, d2.centers)
        assert d.width == d2.width

    def test_json_structure(self):
        d = Dictionary(np.array([[0.5, -0.5]]), 0.3)
        rec = json.loads(d.to_json())
        assert set(rec) == {"centers", "width"}
