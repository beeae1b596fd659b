import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anomver import (RecordingTrajectory, TrajectoryState, confidence, decompose,
                     max_min_divergence, posterior, update)
from anomver.belief import confidence_from_z, replay
from conftest import random_model


def likelihood_oracle(model, components, observations):
    """Confidence and posterior straight from the history likelihoods under each hypothesis."""
    m = model.M
    log_lik = np.zeros(m + 1)
    for u, y in zip(components, observations):
        ch = model.channels[u - 1]
        for x in range(m + 1):
            log_lik[x] += math.log(ch.p1.probs[y] if x == u else ch.p0.probs[y])
    w = model.prior_tilde * np.exp(log_lik[1:] - log_lik[1:].max())
    mix = math.log(w.sum()) + log_lik[1:].max()
    return log_lik[0] - mix, w / w.sum()


def random_history(rng, model, n):
    comps = rng.integers(1, model.M + 1, size=n)
    obs = [int(rng.integers(model.channels[u - 1].alphabet_size)) for u in comps]
    return [int(u) for u in comps], obs


class TestHandValues:
    def test_single_experiment(self, ref_model, ref_solution):
        state = update(TrajectoryState.zero(2), ref_model, ref_solution, 1, 0)
        assert state.z[0] == pytest.approx(math.log(4), abs=1e-15)
        assert state.z[1] == 0.0
        assert state.z_bar == pytest.approx(0.5 * math.log(4), abs=1e-15)
        # p0(0) / (0.5 p1(0) + 0.5 p0(0)) = 0.8 / 0.5
        assert confidence(state, ref_model) == pytest.approx(math.log(1.6), abs=1e-15)
        assert confidence(state, ref_model) == pytest.approx(0.4700036, abs=1e-7)
        np.testing.assert_allclose(posterior(state, ref_model).probs, [0.2, 0.8], atol=1e-15)
        kl_term, sum_term = decompose(state, ref_model, ref_solution)
        assert kl_term == pytest.approx(-0.2231436, abs=1e-7)
        assert sum_term == pytest.approx(0.6931472, abs=1e-7)

    def test_empty_history(self, ref_model, ref_solution):
        state = TrajectoryState.zero(2)
        assert confidence(state, ref_model) == pytest.approx(0.0, abs=1e-15)
        kl_term, sum_term = decompose(state, ref_model, ref_solution)
        assert kl_term == pytest.approx(0.0, abs=1e-15)
        assert sum_term == pytest.approx(0.0, abs=1e-15)

    def test_update_is_functional(self, ref_model, ref_solution):
        s0 = TrajectoryState.zero(2)
        s1 = update(s0, ref_model, ref_solution, 2, 1)
        assert s0.n == 0 and np.all(s0.z == 0)
        assert s1.n == 1

    def test_vectorized_confidence(self, ref_model):
        z = np.array([[0.0, 0.0], [math.log(4), 0.0]])
        out = confidence_from_z(z, ref_model.log_prior_tilde)
        np.testing.assert_allclose(out, [0.0, math.log(1.6)], atol=1e-15)


class TestAgainstLikelihoods:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 40))
    def test_confidence_and_posterior(self, seed, m, n):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m)
        sol = max_min_divergence(model)
        comps, obs = random_history(rng, model, n)
        state = replay(model, sol, comps, obs)
        c_ref, post_ref = likelihood_oracle(model, comps, obs)
        assert confidence(state, model) == pytest.approx(c_ref, abs=1e-9)
        np.testing.assert_allclose(posterior(state, model).probs, post_ref, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(0, 60))
    def test_decomposition_identity(self, seed, m, n):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m)
        sol = max_min_divergence(model)
        state = replay(model, sol, *random_history(rng, model, n))
        kl_term, sum_term = decompose(state, model, sol)
        assert kl_term <= 0
        assert confidence(state, model) == pytest.approx(kl_term + sum_term, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_confidence_at_most_sum_term(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, 3)
        sol = max_min_divergence(model)
        state = replay(model, sol, *random_history(rng, model, 30))
        assert confidence(state, model) <= decompose(state, model, sol)[1] + 1e-12

    def test_extreme_llrs_stay_finite(self):
        rng = np.random.default_rng(1)
        model = random_model(rng, 3)
        z = np.array([800.0, -800.0, 5.0])
        c = confidence_from_z(z, model.log_prior_tilde)
        assert np.isfinite(c)
        assert c == pytest.approx(-800.0 - model.log_prior_tilde[1], abs=1e-9)


class TestRecording:
    def test_history_round_trip(self, hetero_model):
        sol = max_min_divergence(hetero_model)
        rec = RecordingTrajectory(hetero_model, sol)
        for u, y in [(1, 0), (2, 1), (2, 0), (1, 1)]:
            rec.record(u, y)
        comps, obs = rec.history()
        assert comps == [1, 2, 2, 1] and obs == [0, 1, 0, 1]
        again = replay(hetero_model, sol, comps, obs)
        np.testing.assert_array_equal(again.z, rec.state.z)
        assert again.z_bar == rec.state.z_bar
        assert again.n == 4

    def test_z_bar_is_weighted_sum(self, hetero_model):
        sol = max_min_divergence(hetero_model)
        state = replay(hetero_model, sol, *random_history(np.random.default_rng(3), hetero_model, 25))
        assert state.z_bar == pytest.approx(float(sol.beta_star @ state.z), abs=1e-12)
