import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psfa_ewc.inference import (
    ConvergenceError,
    backward_smooth,
    forward_filter,
    smooth,
    steady_gain,
    steady_state,
)

from conftest import make_params
from oracles import filtered_means_bruteforce, joint_gaussian_posterior, random_params, simulate_lds


class TestForwardFilter:
    def test_zero_emission_carries_no_information(self, rng):
        params = make_params(np.zeros((2, 1)), [0.7], [1.0, 2.0])
        tr = forward_filter(params, rng.normal(size=(2, 6)))
        np.testing.assert_array_equal(tr.gain, 0.0)
        np.testing.assert_array_equal(tr.filtered_mean, 0.0)
        np.testing.assert_allclose(tr.filtered_cov[:, 0, 0], 1.0)

    def test_scalar_bayes_update(self):
        params = make_params([[1.0]], [0.0], [1.0], [[1.0]])
        tr = forward_filter(params, np.array([[2.0]]))
        assert tr.filtered_mean[0, 0] == pytest.approx(1.0)
        assert tr.filtered_cov[0, 0, 0] == pytest.approx(0.5)

    def test_filtered_means_match_prefix_conditioning(self, rng):
        V, lam, s2, S1 = random_params(rng, 2, 1)
        X = rng.normal(size=(2, 4))
        tr = forward_filter(make_params(V, lam, s2, S1), X)
        np.testing.assert_allclose(tr.filtered_mean, filtered_means_bruteforce(V, lam, s2, S1, X), atol=1e-8)

    def test_log_likelihood_matches_joint_density(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        X = rng.normal(size=(3, 6))
        tr = forward_filter(make_params(V, lam, s2, S1), X)
        assert tr.log_likelihood == pytest.approx(joint_gaussian_posterior(V, lam, s2, S1, X)[3], abs=1e-9)

    def test_covariances_symmetric_psd(self, rng):
        V, lam, s2, S1 = random_params(rng, 4, 3)
        tr = forward_filter(make_params(V, lam, s2, S1), rng.normal(size=(4, 50)))
        for mats in (tr.filtered_cov, tr.predicted_cov):
            np.testing.assert_allclose(mats, mats.swapaxes(1, 2), atol=1e-8)
            assert np.linalg.eigvalsh(mats).min() >= -1e-10

    def test_rejects_wrong_shape(self):
        params = make_params(np.ones((2, 1)), [0.5], [1.0, 1.0])
        with pytest.raises(ValueError):
            forward_filter(params, np.ones((3, 4)))

    def test_long_sequence_equals_step_by_step(self, rng):
        # the covariance fast path must not change any value
        V, lam, s2, S1 = random_params(rng, 3, 2)
        params = make_params(V, lam, s2, S1)
        X = rng.normal(size=(3, 300))
        tr = forward_filter(params, X)
        mu = np.zeros(2)
        U = None
        for t in range(300):
            P = S1 if t == 0 else np.diag(lam) @ (U - np.eye(2)) @ np.diag(lam) + np.eye(2)
            K = P @ V.T @ np.linalg.inv(V @ P @ V.T + np.diag(s2))
            prior = lam * mu if t else np.zeros(2)
            mu = prior + K @ (X[:, t] - V @ prior)
            U = (np.eye(2) - K @ V) @ P
        np.testing.assert_allclose(tr.filtered_mean[-1], mu, atol=1e-10)
        np.testing.assert_allclose(tr.filtered_cov[-1], U, atol=1e-12)


class TestBackwardSmooth:
    def test_zero_emission_prior_moments(self, rng):
        params = make_params(np.zeros((2, 1)), [0.0], [1.0, 1.0])
        mom, _ = smooth(params, rng.normal(size=(2, 5)))
        np.testing.assert_array_equal(mom.mean, 0.0)
        np.testing.assert_allclose(mom.second[1:, 0, 0], 1.0)
        np.testing.assert_allclose(mom.cross, 0.0, atol=1e-15)

    def test_single_sample_equals_filter(self, rng):
        V, lam, s2, S1 = random_params(rng, 2, 2)
        params = make_params(V, lam, s2, S1)
        X = rng.normal(size=(2, 1))
        tr = forward_filter(params, X)
        mom = backward_smooth(params, tr)
        np.testing.assert_allclose(mom.mean, tr.filtered_mean)
        np.testing.assert_allclose(mom.cov, tr.filtered_cov, atol=1e-14)
        assert mom.cross.shape == (0, 2, 2)

    def test_fixed_instance_matches_bruteforce(self, rng):
        V, lam, s2, S1 = random_params(rng, 2, 2)
        X = rng.normal(size=(2, 5))
        mom, _ = smooth(make_params(V, lam, s2, S1), X)
        means, second, cross, _ = joint_gaussian_posterior(V, lam, s2, S1, X)
        np.testing.assert_allclose(mom.mean, means, atol=1e-8)
        np.testing.assert_allclose(mom.second, second, atol=1e-8)
        np.testing.assert_allclose(mom.cross, cross, atol=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31))
    def test_matches_bruteforce_property(self, m, p, T, seed):
        if p * T + m * T > 40:
            return
        rng = np.random.default_rng(seed)
        V, lam, s2, S1 = random_params(rng, m, p)
        X = rng.normal(size=(m, T))
        mom, _ = smooth(make_params(V, lam, s2, S1), X)
        means, second, cross, _ = joint_gaussian_posterior(V, lam, s2, S1, X)
        np.testing.assert_allclose(mom.mean, means, atol=1e-7)
        np.testing.assert_allclose(mom.second, second, atol=1e-7)
        np.testing.assert_allclose(mom.cross, cross, atol=1e-7)

    def test_smoothed_covariances_psd(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        mom, _ = smooth(make_params(V, lam, s2, S1), rng.normal(size=(3, 80)))
        cov = mom.cov
        np.testing.assert_allclose(cov, cov.swapaxes(1, 2), atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10


class TestSteadyGain:
    def test_zero_emission(self):
        assert not steady_gain(make_params(np.zeros((2, 1)), [0.3], [1.0, 1.0])).any()

    def test_scalar_fixed_point(self):
        assert steady_gain(make_params([[1.0]], [0.0], [1.0])) == pytest.approx(np.array([[0.5]]))

    def test_matches_long_filter(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2, lam_range=(0.3, 0.9))
        params = make_params(V, lam, s2, S1)
        X, _ = simulate_lds(rng, V, lam, s2, 10_000)
        tr = forward_filter(params, X)
        np.testing.assert_allclose(tr.gain[-1], steady_gain(params), atol=1e-8)

    def test_covariances_consistent(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2)
        ss = steady_state(make_params(V, lam, s2, S1))
        L = np.diag(lam)
        np.testing.assert_allclose(ss.predicted_cov, L @ (ss.filtered_cov - np.eye(2)) @ L + np.eye(2), atol=1e-9)

    def test_non_convergence_reported(self, rng):
        V, lam, s2, S1 = random_params(rng, 3, 2, lam_range=(0.9, 0.95))
        with pytest.raises(ConvergenceError, match="1 iterations"):
            steady_state(make_params(V, lam, s2, S1), max_iter=1)
