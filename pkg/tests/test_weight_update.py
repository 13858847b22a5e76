from dataclasses import replace

import numpy as np
import pytest

from app.core.errors import NumericError, UsageError
from app.engine.dictionary import Dictionary, ald_admit, ald_test
from app.engine.weight_update import (
    batch_ls_oracle,
    krls_attach,
    krls_init,
    krls_step,
    linear_rls_init,
    linear_rls_step,
    mrls_init,
    mrls_resize,
    mrls_step,
    recurrent_gradient,
    recurrent_grad_step,
    recurrent_init,
    recurrent_resize,
)


def krls_run(xs, ys, kernel, nu1=0.1, regularizer=0.0, max_size=None):
    """ALD-KRLS driven by hand; yields (state, dictionary, coefficient rows) after every step."""
    dictionary = Dictionary.empty(kernel, max_size)
    state = krls_init(regularizer)
    rows = []
    for x, y in zip(xs, ys):
        ald = ald_test(dictionary, x) if dictionary.size else None
        if ald is None or (ald.delta1 > nu1 and not dictionary.is_full):
            dictionary = ald_admit(dictionary, x, ald)
            state = krls_step(state, dictionary, x, y, True, ald)
            rows = [np.append(r, 0.0) for r in rows] + [np.eye(dictionary.size)[-1]]
        else:
            state = krls_step(state, dictionary, x, y, False, ald)
            rows.append(ald.alpha)
        yield state, dictionary, np.vstack(rows)


class TestKrls:
    @pytest.mark.parametrize("regularizer", [0.0, 0.5])
    def test_first_sample(self, unit_kernel, regularizer):
        state, _, _ = next(krls_run([np.array([0.3, 0.1])], [2.0], unit_kernel, regularizer=regularizer))
        np.testing.assert_allclose(state.alpha, [2.0 / (1.0 + regularizer)], rtol=1e-14)

    def test_matches_batch_oracle_every_step(self, rng, unit_kernel):
        xs = rng.uniform(-1, 1, (30, 2))
        ys = np.sin(2 * xs[:, 0]) + xs[:, 1] ** 2
        for n, (state, dictionary, rows) in enumerate(krls_run(xs, ys, unit_kernel, max_size=10), start=1):
            oracle = batch_ls_oracle(rows @ dictionary.gram, ys[:n])
            np.testing.assert_allclose(state.alpha, oracle, atol=1e-7)

    def test_ridge_matches_batch_oracle(self, rng, unit_kernel):
        xs = rng.uniform(-1, 1, (30, 2))
        ys = xs[:, 0] - xs[:, 1]
        for n, (state, dictionary, rows) in enumerate(krls_run(xs, ys, unit_kernel, regularizer=0.1), start=1):
            oracle = batch_ls_oracle(rows @ dictionary.gram, ys[:n], lam=0.1)
            np.testing.assert_allclose(state.alpha, oracle, atol=1e-7)

    def test_repeated_sample_fits_target(self, unit_kernel):
        x = np.array([0.2, -0.4])
        *_, (state, dictionary, _) = krls_run([x] * 10, [1.5] * 10, unit_kernel)
        assert dictionary.size == 1
        assert state.alpha[0] == pytest.approx(1.5, abs=1e-12)

    def test_inconsistent_admission(self, unit_kernel):
        dictionary = ald_admit(Dictionary.empty(unit_kernel), [0.0, 0.0])
        with pytest.raises(UsageError):
            krls_step(krls_init(0.0), dictionary, [0.0, 0.0], 1.0, False, None)

    def test_attach_to_fixed_dictionary(self, unit_kernel):
        dictionary = Dictionary.from_centers(unit_kernel, [[0.0, 0.0], [1.5, 0.0]])
        state = krls_attach(dictionary, 0.0, delta=1e-3)
        assert np.array_equal(state.alpha, np.zeros(2))
        ald = ald_test(dictionary, [0.5, 0.0])
        state = krls_step(state, dictionary, [0.5, 0.0], 1.0, False, ald)
        assert np.all(np.isfinite(state.alpha))


def classical_rls(xs, ys, delta=1e-3):
    m = xs.shape[1]
    w, P = np.zeros(m), np.eye(m) / delta
    trace = []
    for x, y in zip(xs, ys):
        k = P @ x / (1.0 + x @ P @ x)
        w = w + k * (y - x @ w)
        P = P - np.outer(k, x @ P)
        trace.append(w.copy())
    return trace


class TestMrls:
    def test_reduces_to_classical_rls(self, rng):
        xs = rng.uniform(0, 1, (50, 4))
        ys = xs @ np.array([1.0, -2.0, 0.5, 3.0]) + 0.01 * rng.standard_normal(50)
        state = mrls_init(4, beta=1.0, p=1)
        for (x, y), expected in zip(zip(xs, ys), classical_rls(xs, ys)):
            state, _ = mrls_step(state, x, y)
            np.testing.assert_allclose(state.alpha, expected, atol=1e-9)

    def test_zero_innovation_keeps_weights(self, rng):
        state = mrls_init(3)
        for x in rng.uniform(0, 1, (5, 3)):
            state, _ = mrls_step(state, x, float(x.sum()))
        k = rng.uniform(0, 1, 3)
        after, error = mrls_step(state, k, float(k @ state.alpha))
        assert error == 0.0
        np.testing.assert_allclose(after.alpha, state.alpha, atol=1e-12)

    def test_covariance_stays_symmetric(self, rng):
        state = mrls_init(4, beta=0.9, p=2)
        for x in rng.uniform(0, 1, (200, 4)):
            state, _ = mrls_step(state, x, float(np.sin(x.sum())))
            assert np.max(np.abs(state.P - state.P.T)) <= 1e-10
        assert np.linalg.eigvalsh(state.P)[0] > 0

    def test_returns_prior_error(self):
        state = mrls_init(2)
        _, error = mrls_step(state, [1.0, 0.0], 3.0)
        assert error == 3.0

    @pytest.mark.parametrize("beta", [0.0, 1.5])
    def test_bad_forgetting_factor(self, beta):
        with pytest.raises(UsageError):
            mrls_init(2, beta=beta)

    def test_resize_pads_covariance(self):
        state = mrls_resize(mrls_init(1, delta=1e-2), 3)
        assert state.alpha.size == 3
        np.testing.assert_allclose(np.diag(state.P), [100.0, 100.0, 100.0])

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            mrls_step(mrls_init(2), [1.0, 2.0, 3.0], 1.0)

    def test_converges_with_krls_on_a_fixed_dictionary(self, rng, unit_kernel):
        centers = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0], [1.0, 1.0]])
        dictionary = Dictionary.from_centers(unit_kernel, centers)
        target = np.array([1.0, -1.0, 0.5, 2.0, -0.5])
        mrls = mrls_init(5, beta=1.0, p=1, delta=1e-4)
        krls = krls_attach(dictionary, 0.0, delta=1e-4)
        for index in rng.integers(0, 5, 500):
            x = centers[index]
            k = dictionary.kernel_vector(x)
            y = float(k @ target)
            mrls, _ = mrls_step(mrls, k, y)
            krls = krls_step(krls, dictionary, x, y, False, ald_test(dictionary, x))
        assert np.max(np.abs(mrls.alpha - krls.alpha)) <= 1e-4

    def test_covariance_positive_definite_over_long_run(self, rng):
        state = mrls_init(4, beta=0.98, p=2)
        for step, x in enumerate(rng.uniform(0, 1, (1000, 4))):
            state, _ = mrls_step(state, x, float(np.cos(x @ [1.0, 2.0, -1.0, 0.5])))
            if step % 50 == 49:
                assert np.linalg.eigvalsh(state.P)[0] > 0
        assert np.all(np.isfinite(state.P))


class TestRecurrentGradient:
    @pytest.fixture
    def dictionary(self, unit_kernel):
        return Dictionary.from_centers(unit_kernel, [[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]])

    def test_zero_error_keeps_weights(self, dictionary):
        state = recurrent_init(3, eta=0.2, feedback_lags=(0,))
        state = recurrent_grad_step(state, dictionary, [0.1, 0.2], 0.7)
        x = np.array([0.3, -0.2])
        y = float(dictionary.kernel_vector(x) @ state.alpha)
        after = recurrent_grad_step(state, dictionary, x, y)
        np.testing.assert_allclose(after.alpha, state.alpha, atol=1e-15)

    def test_plain_gradient_step(self, dictionary):
        state = recurrent_init(3, eta=0.25, lambda_scale=0.0)
        x = np.array([0.4, 0.1])
        k = dictionary.kernel_vector(x)
        after = recurrent_grad_step(state, dictionary, x, 2.0)
        np.testing.assert_allclose(after.alpha, 2 * 0.25 * 2.0 * k, rtol=1e-14)

    def test_gradient_matches_finite_differences(self, rng, dictionary):
        state = recurrent_init(3, lambda_scale=0.0)
        state = recurrent_grad_step(state, dictionary, [0.2, 0.2], 1.0)
        x, y = rng.standard_normal(2), 0.8
        grad, _, _ = recurrent_gradient(state, dictionary, x, y)
        k = dictionary.kernel_vector(x)
        h = 1e-6
        fd = np.array([
            ((y - k @ (state.alpha + h * e)) ** 2 - (y - k @ (state.alpha - h * e)) ** 2) / (2 * h)
            for e in np.eye(3)
        ])
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)

    def test_resize(self):
        state = recurrent_resize(recurrent_init(1, lambda_scale=0.5), 3)
        np.testing.assert_allclose(state.lambda_rec, 0.5 * np.eye(3))

    @pytest.mark.parametrize("eta", [1e-4, 1e-3])
    def test_small_step_lowers_the_error(self, dictionary, eta):
        state = recurrent_init(3, eta=0.2, feedback_lags=(0,))
        state = recurrent_grad_step(state, dictionary, [0.1, 0.2], 0.7)
        x, y = np.array([0.3, -0.2]), 1.4
        k = dictionary.kernel_vector(x)
        after = recurrent_grad_step(replace(state, eta=eta), dictionary, x, y)
        assert (y - k @ after.alpha) ** 2 < (y - k @ state.alpha) ** 2


class TestLinearRls:
    def test_constant_stream(self):
        state = linear_rls_init(1)
        for _ in range(200):
            state, _ = linear_rls_step(state, [1.0], 4.0)
        assert state.theta[0] == pytest.approx(4.0, abs=1e-4)

    def test_matches_ridge_solution(self, rng):
        xs = rng.standard_normal((40, 3))
        ys = xs @ np.array([0.5, -1.0, 2.0]) + 0.1 * rng.standard_normal(40)
        state = linear_rls_init(3, beta2=1.0, delta=1e-3)
        for x, y in zip(xs, ys):
            state, _ = linear_rls_step(state, x, y)
        np.testing.assert_allclose(state.theta, batch_ls_oracle(xs, ys, lam=1e-3), atol=1e-8)

    def test_zero_input_only_rescales_covariance(self):
        state = linear_rls_init(2, beta2=0.5)
        after, error = linear_rls_step(state, [0.0, 0.0], 3.0)
        assert error == 3.0
        assert np.array_equal(after.theta, state.theta)
        np.testing.assert_allclose(after.P, state.P / 0.5)

    def test_bad_forgetting_factor(self):
        with pytest.raises(UsageError):
            linear_rls_init(2, beta2=1.5)

    def test_covariance_positive_definite_over_long_run(self, rng):
        state = linear_rls_init(3, beta2=0.95)
        for step, x in enumerate(rng.standard_normal((1000, 3))):
            state, _ = linear_rls_step(state, x, float(x @ [0.5, -1.0, 2.0]))
            if step % 50 == 49:
                assert np.linalg.eigvalsh(state.P)[0] > 0


class TestBatchOracle:
    def test_identity_design(self):
        np.testing.assert_allclose(batch_ls_oracle(np.eye(3), [1.0, 2.0, 3.0], lam=1.0), [0.5, 1.0, 1.5])

    def test_orthogonal_target(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(batch_ls_oracle(A, [0.0, 0.0, 5.0]), [0.0, 0.0], atol=1e-15)

    def test_optimality_condition(self, rng):
        A, y = rng.standard_normal((10, 4)), rng.standard_normal(10)
        w = batch_ls_oracle(A, y, lam=0.3)
        assert np.linalg.norm(A.T @ (A @ w - y) + 0.3 * w) <= 1e-9

    def test_rank_deficient(self):
        with pytest.raises(NumericError):
            batch_ls_oracle(np.ones((4, 2)), np.ones(4))
