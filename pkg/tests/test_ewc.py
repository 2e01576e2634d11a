import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psfa_ewc.ewc import (
    EwcConfig,
    ImportanceState,
    absorb_mode,
    emission_score,
    fim_emission,
    fim_lambda,
    transition_score,
)
from psfa_ewc.inference import SmoothedMoments, smooth

from conftest import make_params
from oracles import central_difference, emission_logdensity, random_params, transition_logdensity


def moments_from_means(means):
    means = np.asarray(means, dtype=float)
    sec = np.einsum("ti,tj->tij", means, means)
    cross = np.einsum("ti,tj->tij", means[1:], means[:-1])
    return SmoothedMoments(means, sec, cross)


class TestImportanceState:
    def test_fresh_is_zero(self):
        s = ImportanceState.fresh(3, 2)
        assert s.mode_count == 0 and not s.omega_v.any() and not s.omega_lambda.any()

    def test_fresh_with_weights_rejected(self):
        with pytest.raises(ValueError):
            ImportanceState(np.eye(2), np.zeros(1), np.zeros((2, 1)), np.zeros(1), 0)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            ImportanceState(np.eye(3), np.zeros(1), np.zeros((2, 1)), np.zeros(1), 1)


class TestFimEmission:
    def test_perfect_fit_is_zero(self, rng):
        V = rng.normal(size=(3, 2))
        means = rng.normal(size=(7, 2))
        F = fim_emission(make_params(V, [0.5, 0.5], [1.0, 1.0, 1.0]), V @ means.T, moments_from_means(means))
        np.testing.assert_array_equal(F, 0.0)

    def test_single_term_arithmetic(self):
        params = make_params([[0.0]], [0.5], [1.0])
        x, y = np.array([2.0]), np.array([1.0])
        # the log-density gradient is (x - V y) y / sigma^2 = +2
        np.testing.assert_allclose(emission_score(params, x, y), [[2.0]])
        F = fim_emission(params, x[:, None], moments_from_means([[1.0]]))
        np.testing.assert_allclose(F, [[4.0]])

    def test_score_matches_finite_differences(self, rng):
        for _ in range(50):
            V, lam, s2, S1 = random_params(rng, 3, 2)
            x, y = rng.normal(size=3), rng.normal(size=2)
            fd = central_difference(lambda W: emission_logdensity(W, s2, x, y), V)
            np.testing.assert_allclose(emission_score(make_params(V, lam, s2, S1), x, y), fd, atol=1e-5)

    def test_fixed_instance_matches_fd_outer_products(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        X = rng.normal(size=(3, 10))
        params = make_params(V, lam, s2, S1)
        mom, _ = smooth(params, X)
        F = np.zeros((3, 3))
        for t in range(10):
            G = central_difference(lambda W: emission_logdensity(W, s2, X[:, t], mom.mean[t]), V)
            F += G @ G.T
        np.testing.assert_allclose(fim_emission(params, X, mom), F / 10, atol=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.integers(2, 20), st.integers(0, 2**31))
    def test_symmetric_psd(self, m, p, T, seed):
        rng = np.random.default_rng(seed)
        V, lam, s2, S1 = random_params(rng, m, p)
        params = make_params(V, lam, s2, S1)
        X = rng.normal(size=(m, T))
        mom, _ = smooth(params, X)
        F = fim_emission(params, X, mom)
        np.testing.assert_array_equal(F, F.T)
        assert np.linalg.eigvalsh(F).min() >= -1e-10

    def test_posterior_sampling_mode(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        params = make_params(V, lam, s2, S1)
        X = rng.normal(size=(3, 40))
        mom, _ = smooth(params, X)
        F = fim_emission(params, X, mom, posterior_samples=64, rng=np.random.default_rng(1))
        np.testing.assert_allclose(F, F.T)
        assert np.linalg.eigvalsh(F).min() >= -1e-10
        # posterior spread only adds variability to the score
        assert np.trace(F) > 0.5 * np.trace(fim_emission(params, X, mom))


class TestFimLambda:
    def test_zero_products_give_zero(self):
        means = np.array([[0.0], [1.0], [0.0], [2.0]])
        F = fim_lambda(make_params(np.ones((2, 1)), [0.0], [1.0, 1.0]), moments_from_means(means))
        np.testing.assert_array_equal(F, [0.0])

    def test_hand_evaluated_score(self):
        g = transition_score(1.0, 1.0, 0.5)
        assert g == pytest.approx(0.625 / 0.5625)
        F = fim_lambda(make_params(np.ones((2, 1)), [0.5], [1.0, 1.0]), moments_from_means([[1.0], [1.0]]))
        assert F[0] == pytest.approx(g**2 / 2)

    def test_score_matches_finite_differences(self, rng):
        for _ in range(50):
            lam = rng.uniform(0.0, 0.95, size=2)
            y_t, y_p = rng.normal(size=2), rng.normal(size=2)
            fd = central_difference(lambda l: transition_logdensity(l, y_t, y_p), lam)
            np.testing.assert_allclose(transition_score(y_t, y_p, lam), fd, atol=1e-5)

    def test_nonnegative(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        params = make_params(V, lam, s2, S1)
        mom, _ = smooth(params, rng.normal(size=(3, 30)))
        assert np.all(fim_lambda(params, mom) >= 0)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            fim_lambda(make_params(np.ones((1, 1)), [0.5], [1.0]), moments_from_means([[1.0]]))


class TestAbsorb:
    def _params(self, m=2, p=1, seed=0):
        V, lam, s2, S1 = random_params(np.random.default_rng(seed), m, p)
        return make_params(V, lam, s2, S1)

    def test_first_mode_formula(self):
        params = self._params()
        s = absorb_mode(ImportanceState.fresh(2, 1), params, np.eye(2), np.array([0.5]), EwcConfig(2.0, 2.0, 0.1))
        np.testing.assert_allclose(s.omega_v, 2.1 * np.eye(2))
        np.testing.assert_allclose(s.omega_lambda, [1.1])
        np.testing.assert_array_equal(s.anchor_v, params.emission)
        assert s.mode_count == 1

    def test_zero_eta_keeps_weights_moves_anchors(self):
        first = absorb_mode(ImportanceState.fresh(2, 1), self._params(seed=1), np.eye(2), np.array([1.0]), EwcConfig())
        later = self._params(seed=2)
        s = absorb_mode(first, later, 5 * np.eye(2), np.array([3.0]), EwcConfig(0.0, 0.0, 1e-3))
        np.testing.assert_array_equal(s.omega_v, first.omega_v)
        np.testing.assert_array_equal(s.omega_lambda, first.omega_lambda)
        np.testing.assert_array_equal(s.anchor_v, later.emission)
        np.testing.assert_array_equal(s.anchor_lambda, later.transition_diag)

    def test_zero_eta_zero_prior_on_fresh_state(self):
        s = absorb_mode(ImportanceState.fresh(2, 1), self._params(), np.eye(2), np.array([1.0]), EwcConfig(0.0, 0.0, 0.0))
        assert not s.omega_v.any() and not s.omega_lambda.any()

    def test_two_absorptions_unroll(self, rng):
        A, B = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        F1, F2 = A @ A.T, B @ B.T
        s = absorb_mode(ImportanceState.fresh(2, 1), self._params(), F1, np.array([0.2]), EwcConfig(1.5, 1.5, 0.01))
        s = absorb_mode(s, self._params(seed=3), F2, np.array([0.4]), EwcConfig(0.7, 0.7, 0.01))
        np.testing.assert_allclose(s.omega_v, 1.5 * F1 + 0.7 * F2 + 0.01 * np.eye(2), atol=1e-14)
        np.testing.assert_allclose(s.omega_lambda, [1.5 * 0.2 + 0.7 * 0.4 + 0.01])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 10), st.integers(0, 2**31)), min_size=1, max_size=5), st.randoms())
    def test_weights_are_order_free_and_psd(self, steps, random):
        def fims(seed):
            r = np.random.default_rng(seed)
            A = r.normal(size=(3, 3))
            return A @ A.T, r.uniform(0, 2, size=1)

        def run(order):
            s = ImportanceState.fresh(3, 1)
            s = absorb_mode(s, self._params(3, 1), np.zeros((3, 3)), np.zeros(1), EwcConfig(1.0, 1.0, 0.1))
            for eta, seed in order:
                Fv, Fl = fims(seed)
                s = absorb_mode(s, self._params(3, 1, seed % 97), Fv, Fl, EwcConfig(eta, eta, 0.1))
            return s

        shuffled = list(steps)
        random.shuffle(shuffled)
        a, b = run(steps), run(shuffled)
        np.testing.assert_allclose(a.omega_v, b.omega_v, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a.omega_lambda, b.omega_lambda, rtol=1e-12)
        np.testing.assert_array_equal(a.omega_v, a.omega_v.T)
        assert np.linalg.eigvalsh(a.omega_v).min() >= -1e-10

    def test_rejects_negative_lambda_fim(self):
        with pytest.raises(ValueError):
            absorb_mode(ImportanceState.fresh(2, 1), self._params(), np.eye(2), np.array([-1.0]), EwcConfig())
