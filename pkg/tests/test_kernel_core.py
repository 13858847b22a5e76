import math

import numpy as np
import pytest

from app.core.errors import NumericError, UsageError
from app.engine.kernel_core import (
    KernelConfig,
    KernelNode,
    default_c0,
    eigen_transform,
    empirical_covariance,
    eval_kernel,
    kernel_vector,
    precision_from_eigen,
    precision_from_empirical,
    project_to_floor,
    quadratic_form,
    quadratic_form_eigen,
    rank_one_precision_update,
)


class TestKernelNode:
    def test_rejects_asymmetric_precision(self):
        with pytest.raises(UsageError):
            KernelNode(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(UsageError):
            KernelNode(np.zeros(3), np.eye(2))

    def test_rejects_eigenvalue_below_floor(self):
        with pytest.raises(NumericError):
            KernelNode(np.zeros(2), np.diag([1.0, -1.0]))

    def test_rejects_non_finite_center(self):
        with pytest.raises(NumericError):
            KernelNode(np.array([np.nan, 0.0]), np.eye(2))

    def test_rejects_non_positive_h0(self):
        with pytest.raises(UsageError):
            KernelNode(np.zeros(2), np.eye(2), h0=0.0)


class TestEvalKernel:
    def test_value_at_center_is_one(self, random_precision):
        node = KernelNode(np.array([0.5, -1.0, 2.0]), random_precision, h0=3.0)
        assert eval_kernel(node, node.center) == 1.0

    def test_isotropic_unit_distance(self):
        node = KernelNode(np.zeros(2), np.eye(2))
        assert eval_kernel(node, [1.0, 0.0]) == pytest.approx(math.exp(-1.0), abs=1e-15)

    def test_matches_eigen_factorized_form(self, rng, random_precision):
        node = KernelNode(rng.standard_normal(3), random_precision, h0=2.5)
        transform = eigen_transform(node)
        for x in rng.standard_normal((20, 3)):
            expected = math.exp(-quadratic_form_eigen(transform, node.center, x) / node.h0)
            assert eval_kernel(node, x) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        node = KernelNode(np.zeros(2), np.eye(2))
        with pytest.raises(UsageError):
            eval_kernel(node, [1.0, 2.0, 3.0])

    def test_kernel_vector_matches_nodes(self, rng, random_precision):
        kernel = KernelConfig(random_precision, 1.7)
        centers = rng.standard_normal((6, 3))
        x = rng.standard_normal(3)
        expected = [eval_kernel(kernel.node(c), x) for c in centers]
        np.testing.assert_allclose(kernel_vector(centers, kernel.precision, kernel.h0, x), expected, atol=1e-14)

    def test_kernel_vector_of_empty_dictionary(self):
        assert kernel_vector(np.zeros((0, 2)), np.eye(2), 1.0, [1.0, 1.0]).size == 0


class TestQuadraticForm:
    def test_zero_at_center(self, random_precision):
        node = KernelNode(np.ones(3), random_precision)
        assert quadratic_form(node, np.ones(3)) == 0.0

    def test_diagonal_case(self):
        node = KernelNode(np.zeros(2), np.diag([4.0, 1.0]))
        assert quadratic_form(node, [1.0, 0.0]) == 4.0

    def test_matches_transform(self, rng, random_precision):
        node = KernelNode(rng.standard_normal(3), random_precision)
        transform = eigen_transform(node)
        x = rng.standard_normal(3)
        assert quadratic_form(node, x) == pytest.approx(quadratic_form_eigen(transform, node.center, x), abs=1e-12)


class TestEigenTransform:
    def test_orthonormal_and_sorted(self, random_precision):
        transform = eigen_transform(KernelNode(np.zeros(3), random_precision))
        d = transform.eigenvectors
        np.testing.assert_allclose(d.T @ d, np.eye(3), atol=1e-10)
        assert np.all(np.diff(transform.eigenvalues) <= 0)

    def test_reconstruction(self, random_precision):
        transform = eigen_transform(KernelNode(np.zeros(3), random_precision))
        rebuilt = precision_from_eigen(transform)
        error = np.linalg.norm(rebuilt - random_precision) / np.linalg.norm(random_precision)
        assert error <= 1e-10


class TestEmpiricalCovariance:
    def test_single_sample_at_center(self):
        cov = empirical_covariance([[1.0, 2.0]], [1.0], [1.0, 2.0], 1.0)
        assert np.array_equal(cov, np.zeros((2, 2)))

    def test_symmetric_pair(self):
        c = np.array([0.5, -0.5, 1.0])
        e1 = np.eye(3)[0]
        cov = empirical_covariance([c + e1, c - e1], [0.5, 0.5], c, 1.0)
        np.testing.assert_allclose(cov, np.diag([1.0, 0.0, 0.0]), atol=1e-15)

    def test_matches_outer_product_sum(self, rng):
        samples = rng.standard_normal((10, 3))
        weights = rng.uniform(0.0, 1.0, 10)
        center = rng.standard_normal(3)
        expected = 0.7 * sum(w * np.outer(s - center, s - center) for s, w in zip(samples, weights))
        np.testing.assert_allclose(empirical_covariance(samples, weights, center, 0.7), expected, atol=1e-12)

    def test_negative_weight(self):
        with pytest.raises(UsageError):
            empirical_covariance([[1.0]], [-1.0], [0.0], 1.0)

    def test_permutation_invariant(self, rng):
        samples = rng.standard_normal((8, 2))
        weights = rng.uniform(0.1, 1.0, 8)
        order = rng.permutation(8)
        first = empirical_covariance(samples, weights, [0.0, 0.0], 1.0)
        second = empirical_covariance(samples[order], weights[order], [0.0, 0.0], 1.0)
        np.testing.assert_allclose(first, second, rtol=1e-13, atol=1e-14)

    def test_precision_is_inverse_covariance(self, rng):
        samples = rng.standard_normal((50, 3))
        weights = np.full(50, 1 / 50)
        precision = precision_from_empirical(samples, weights, np.zeros(3), 1.0)
        covariance = empirical_covariance(samples, weights, np.zeros(3), 1.0)
        np.testing.assert_allclose(precision @ covariance, np.eye(3), atol=1e-10)
        KernelNode(np.zeros(3), precision)


class TestRankOneUpdate:
    def test_zero_direction_scales_precision(self, random_precision):
        node = KernelNode(np.zeros(3), random_precision)
        updated = rank_one_precision_update(node, np.zeros(3), c0=0.25)
        assert np.array_equal(updated.precision, 0.75 * random_precision)

    def test_hand_computed_case(self):
        node = KernelNode(np.zeros(2), np.eye(2))
        updated = rank_one_precision_update(node, [1.0, 0.0], c0=0.5, sign=1)
        np.testing.assert_array_equal(updated.precision, np.diag([1.5, 0.5]))

    def test_negative_update_is_floored(self, rng):
        node = KernelNode(np.zeros(3), np.eye(3), eigen_floor=1e-6)
        updated = rank_one_precision_update(node, 3.0 * rng.standard_normal(3), c0=0.5, sign=-1)
        assert np.linalg.eigvalsh(updated.precision)[0] >= 1e-6 * (1 - 1e-9)
        assert np.array_equal(updated.precision, updated.precision.T)

    def test_default_rate(self):
        assert default_c0(3) == pytest.approx(2.0 / 9.0)

    @pytest.mark.parametrize("c0", [0.0, 1.0, 1.5])
    def test_rate_out_of_range(self, c0):
        with pytest.raises(UsageError):
            rank_one_precision_update(KernelNode(np.zeros(2), np.eye(2)), [1.0, 0.0], c0=c0)

    def test_bad_sign(self):
        with pytest.raises(UsageError):
            rank_one_precision_update(KernelNode(np.zeros(2), np.eye(2)), [1.0, 0.0], sign=2)


def test_project_to_floor_leaves_valid_matrix(random_precision):
    assert np.array_equal(project_to_floor(random_precision), random_precision)


def test_kernel_config_isotropic():
    kernel = KernelConfig.isotropic(3, 0.5, h0=2.0)
    assert kernel.dim == 3
    assert np.array_equal(kernel.precision, 0.5 * np.eye(3))
    assert kernel.with_precision(np.eye(3)).h0 == 2.0
