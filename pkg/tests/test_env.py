"""Request-stream simulator: kernel, chains, churn, batches, observations."""

import math
from fractions import Fraction

import numpy as np
import pytest

from fogcache.env import (
    ContentCatalog,
    Environment,
    EnvironmentConfig,
    PopularityChain,
    PreferenceChain,
    UserPopulation,
    advance_chains,
    churn_users,
    generate_requests,
    kernel,
    kernel_matrix,
    observe,
    request_weights,
    sticky_transition,
    zipf_popularity,
)


class TestKernel:
    def test_alpha_zero_is_one_for_any_pair(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x, y = rng.random(3), rng.random(3)
            assert kernel(x, y, 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_identical_vectors_give_one_for_any_alpha(self):
        rng = np.random.default_rng(2)
        for alpha in (0.0, 0.3, 0.9, 0.999):
            x = rng.random(4)
            assert kernel(x, x, alpha) == pytest.approx(1.0, abs=1e-12)

    def test_half_distance_half_alpha(self):
        # d = 0.5 exactly: one coordinate differs by 1 over two dimensions
        g = kernel(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0.5)
        # independent route: g = exp(ln(1/2) * (-ln(1/2))) = exp(-(ln 2)^2)
        assert g == pytest.approx(math.exp(-math.log(2) ** 2), rel=1e-12)
        assert g == pytest.approx(0.6185, abs=5e-5)

    def test_decreases_with_alpha_at_fixed_distance(self):
        x, y = np.array([0.2, 0.2]), np.array([0.7, 0.4])
        values = [kernel(x, y, a) for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_decreases_with_distance_at_fixed_alpha(self):
        y = np.zeros(1)
        values = [kernel(np.array([t]), y, 0.6) for t in (0.1, 0.3, 0.5, 0.8, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_high_alpha_suppresses_distant_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.random(2)
            y = np.clip(x + rng.choice([-1.0, 1.0], 2), 0, 1)
            d = float(np.square(x - y).sum()) / 2
            if d >= 0.5:
                assert kernel(x, y, 0.999) < 0.01

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            kernel(np.zeros(2), np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            kernel(np.zeros(2), np.zeros(2), -0.1)
        with pytest.raises(ValueError):
            kernel(np.zeros(2), np.zeros(3), 0.5)

    def test_inner_product_form_exceeds_one(self):
        """The alternate inner-product form violates the [0,1] range, which is
        why the distance form is the default."""
        g = kernel(np.array([0.5, 0.5]), np.array([0.5, 0.5]), 0.5, form="inner-product")
        assert g > 1.0

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(4)
        traits, features = rng.random((5, 3)), rng.random((7, 3))
        matrix = kernel_matrix(traits, features, 0.45)
        for i in range(5):
            for j in range(7):
                assert matrix[i, j] == pytest.approx(
                    kernel(traits[i], features[j], 0.45), rel=1e-12
                )


class TestZipfPopularity:
    def test_four_contents_beta_one(self):
        expected = [Fraction(12, 25), Fraction(6, 25), Fraction(4, 25), Fraction(3, 25)]
        probs = zipf_popularity(4, 1.0, np.arange(4))
        np.testing.assert_allclose(probs, [float(e) for e in expected], rtol=1e-12)

    def test_tiny_beta_is_nearly_uniform(self):
        probs = zipf_popularity(6, 1e-9, np.arange(6))
        np.testing.assert_allclose(probs, np.full(6, 1 / 6), atol=1e-9)

    def test_single_content(self):
        np.testing.assert_allclose(zipf_popularity(1, 2.5, np.array([0])), [1.0])

    def test_permutation_moves_mass(self):
        perm = np.array([3, 1, 0, 2])  # content 3 holds rank 1
        probs = zipf_popularity(4, 1.0, perm)
        assert probs[3] == pytest.approx(0.48, rel=1e-12)
        assert probs[0] == pytest.approx(0.16, rel=1e-12)

    def test_simplex(self):
        probs = zipf_popularity(30, 0.7, np.random.default_rng(5).permutation(30))
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(probs > 0)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            zipf_popularity(4, 0.0, np.arange(4))
        with pytest.raises(ValueError):
            zipf_popularity(4, 1.0, np.array([0, 1, 1, 2]))


class TestChains:
    def test_single_state_never_moves(self):
        chain = PopularityChain([1.0], [np.arange(5)], np.ones((1, 1)))
        rng = np.random.default_rng(6)
        for _ in range(50):
            assert chain.advance(rng) == 0

    def test_identity_transition_freezes_state(self):
        chain = PreferenceChain([0.1, 0.5, 0.9], np.eye(3), current=1)
        rng = np.random.default_rng(7)
        for _ in range(50):
            assert chain.advance(rng) == 1

    def test_deterministic_row_moves_deterministically(self):
        transition = np.array([[0.0, 1.0], [0.0, 1.0]])
        chain = PreferenceChain([0.2, 0.8], transition, current=0)
        assert chain.advance(np.random.default_rng(8)) == 1

    def test_chains_advance_independently(self):
        """Freezing one chain leaves the other's trajectory unchanged."""
        perms = [np.arange(4), np.arange(4)[::-1]]
        transition = sticky_transition(2, 0.5)

        def pref_path(pop_transition):
            rng = np.random.default_rng(99)
            pop = PopularityChain([1.0, 2.0], perms, pop_transition)
            pref = PreferenceChain([0.1, 0.9], transition)
            return [advance_chains(pop, pref, rng)[1] for _ in range(40)]

        # the preference chain consumes its own draw regardless of the
        # popularity chain's transition structure
        assert pref_path(transition) == pref_path(np.eye(2))

    def test_two_state_occupancy_matches_stationary_distribution(self):
        """Empirical state occupancy converges to the analytic stationary law."""
        transition = np.array([[0.9, 0.1], [0.2, 0.8]])
        # stationary distribution of this chain is (2/3, 1/3)
        chain = PreferenceChain([0.2, 0.7], transition, current=0)
        rng = np.random.default_rng(9)
        visits = np.zeros(2)
        for _ in range(100_000):
            visits[chain.advance(rng)] += 1
        occupancy = visits / visits.sum()
        np.testing.assert_allclose(occupancy, [2 / 3, 1 / 3], atol=0.01)

    def test_row_sum_validation(self):
        with pytest.raises(ValueError):
            PreferenceChain([0.5], np.array([[0.9]]))
        with pytest.raises(ValueError):
            PreferenceChain([0.5, 0.6], np.array([[0.5, 0.5], [0.7, 0.2]]))

    def test_alpha_domain_validation(self):
        with pytest.raises(ValueError):
            PreferenceChain([1.0], np.ones((1, 1)))

    def test_sticky_transition_shape(self):
        t = sticky_transition(4, 0.8)
        np.testing.assert_allclose(t.sum(axis=1), np.ones(4), atol=1e-15)
        np.testing.assert_allclose(np.diag(t), np.full(4, 0.8))
        assert t[0, 1] == pytest.approx(0.2 / 3)


class TestChurn:
    def _fresh(self, size, turnover, seed=10):
        return UserPopulation.fresh(size, 3, turnover, np.random.default_rng(seed))

    def test_zero_turnover_is_identity(self):
        pop = self._fresh(12, 0.0)
        after = churn_users(pop, np.random.default_rng(11))
        np.testing.assert_array_equal(after.user_ids, pop.user_ids)
        np.testing.assert_array_equal(after.traits, pop.traits)

    def test_full_turnover_replaces_everyone(self):
        pop = self._fresh(12, 1.0)
        after = churn_users(pop, np.random.default_rng(12))
        assert after.size == 12
        assert not set(after.user_ids.tolist()) & set(pop.user_ids.tolist())

    def test_survivor_traits_fixed(self):
        pop = self._fresh(30, 0.4)
        after = churn_users(pop, np.random.default_rng(13))
        surviving = np.isin(after.user_ids, pop.user_ids)
        np.testing.assert_array_equal(after.traits[surviving], pop.traits[surviving])

    def test_replacement_rate_matches_binomial_mean(self):
        """N=10, turnover 0.3: mean replacements over many slots is 3 +/- 0.1."""
        pop = self._fresh(10, 0.3)
        rng = np.random.default_rng(14)
        replaced = 0
        slots = 10_000
        for _ in range(slots):
            after = churn_users(pop, rng)
            replaced += 10 - int(np.isin(after.user_ids, pop.user_ids).sum())
            pop = after
        assert abs(replaced / slots - 3.0) <= 0.1

    def test_ids_never_reused(self):
        pop = self._fresh(5, 0.5)
        rng = np.random.default_rng(15)
        seen = set(pop.user_ids.tolist())
        for _ in range(100):
            pop = churn_users(pop, rng)
            fresh = set(pop.user_ids.tolist()) - seen
            assert all(uid >= max(seen) - 4 for uid in fresh)
            seen |= set(pop.user_ids.tolist())


class TestRequestGeneration:
    def _setup(self, library=4, users=6, seed=20, dim=3):
        rng = np.random.default_rng(seed)
        catalog = ContentCatalog(features=rng.random((library, dim)))
        pop = UserPopulation.fresh(users, dim, 0.0, rng)
        return catalog, pop, rng

    def test_lambda_one_ignores_preference(self):
        """Pure popularity mixing reproduces the ground-truth profile exactly."""
        p_true = zipf_popularity(4, 1.0, np.arange(4))
        affinities = np.random.default_rng(21).random((6, 4))
        weights, fallback = request_weights(p_true, affinities, mix_lambda=1.0)
        assert fallback == 0
        for row in weights:
            np.testing.assert_allclose(row, p_true, rtol=1e-12)

    def test_alpha_zero_yields_popularity_power(self):
        """With unit affinity everywhere, weights follow p^lambda renormalised."""
        catalog, pop, rng = self._setup()
        p_true = zipf_popularity(4, 1.0, np.arange(4))
        affinities = kernel_matrix(pop.traits, catalog.features, 0.0)
        weights, _ = request_weights(p_true, affinities, mix_lambda=0.4)
        expected = p_true**0.4 / (p_true**0.4).sum()
        for row in weights:
            np.testing.assert_allclose(row, expected, rtol=1e-12)

    def test_empirical_frequency_matches_sampling_law(self):
        """F=2, p=[0.75, 0.25], lambda=1: a million requests land within 0.002."""
        rng = np.random.default_rng(22)
        catalog = ContentCatalog(features=rng.random((2, 3)))
        pop = UserPopulation.fresh(4, 3, 0.0, rng)
        p_true = np.array([0.75, 0.25])
        total = np.zeros(2)
        while total.sum() < 1_000_000:
            batch, _ = generate_requests(
                catalog, p_true, 0.3, pop, requests_per_user=5000.0,
                mix_lambda=1.0, rng=rng,
            )
            total += batch.counts
        assert abs(total[0] / total.sum() - 0.75) <= 0.002

    def test_zero_weight_rows_fall_back_to_ground_truth(self):
        p_true = np.array([0.5, 0.5])
        affinities = np.array([[0.0, 0.0], [0.2, 0.8]])
        weights, fallback = request_weights(p_true, affinities, mix_lambda=0.0)
        assert fallback == 1
        np.testing.assert_allclose(weights[0], p_true)

    def test_batch_counts_match_request_log(self):
        catalog, pop, rng = self._setup(library=6)
        p_true = zipf_popularity(6, 1.0, np.arange(6))
        batch, _ = generate_requests(
            catalog, p_true, 0.5, pop, requests_per_user=4.0, mix_lambda=0.5, rng=rng
        )
        recount = np.bincount(batch.content_seq, minlength=6)
        np.testing.assert_array_equal(recount, batch.counts)
        assert len(batch.user_seq) == batch.total
        assert set(batch.user_seq.tolist()) <= set(pop.user_ids.tolist())


class TestObserve:
    def _observation(self, counts, seed=30):
        rng = np.random.default_rng(seed)
        library = len(counts)
        catalog = ContentCatalog(features=rng.random((library, 3)))
        pop = UserPopulation.fresh(5, 3, 0.0, rng)
        from fogcache.env import RequestBatch

        counts = np.asarray(counts)
        batch = RequestBatch(
            slot=0,
            counts=counts,
            user_seq=np.zeros(int(counts.sum()), dtype=np.int64),
            content_seq=np.repeat(np.arange(library), counts),
        )
        return batch, pop, catalog

    def test_symmetric_counts(self):
        batch, pop, catalog = self._observation([2, 2, 0, 0])
        obs = observe(batch, pop, catalog, alpha=0.2)
        np.testing.assert_allclose(obs.popularity, [0.5, 0.5, 0.0, 0.0], rtol=1e-12)

    def test_three_to_one_counts(self):
        batch, pop, catalog = self._observation([3, 1])
        obs = observe(batch, pop, catalog, alpha=0.2)
        np.testing.assert_allclose(obs.popularity, [0.75, 0.25], rtol=1e-12)

    def test_empty_batch_is_uniform(self):
        batch, pop, catalog = self._observation([0, 0, 0, 0])
        obs = observe(batch, pop, catalog, alpha=0.2)
        np.testing.assert_allclose(obs.popularity, np.full(4, 0.25), rtol=1e-12)

    def test_preference_is_group_mean_affinity(self):
        """Two users at affinity 1 and 0 for a content average to 0.5."""
        catalog = ContentCatalog(features=np.array([[1.0, 1.0, 1.0]]))
        pop = UserPopulation(
            user_ids=np.array([0, 1]),
            traits=np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]),
            turnover_prob=0.0,
            next_id=2,
        )
        from fogcache.env import RequestBatch

        batch = RequestBatch(
            slot=0, counts=np.array([2]),
            user_seq=np.array([0, 1]), content_seq=np.array([0, 0]),
        )
        obs = observe(batch, pop, catalog, alpha=0.9)
        # d(x1, y) = 0 -> 1; d(x2, y) = 1 -> 0
        assert obs.preference[0] == pytest.approx(0.5, abs=1e-12)
        assert obs.group_size == 2

    def test_popularity_sums_to_one(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            counts = rng.integers(0, 9, 7)
            batch, pop, catalog = self._observation(counts.tolist(), seed=int(rng.integers(1e6)))
            obs = observe(batch, pop, catalog, alpha=0.3)
            assert obs.popularity.sum() == pytest.approx(1.0, abs=1e-9)


def _tiny_env_config(**overrides):
    params = dict(
        library_size=5,
        feature_dim=3,
        num_users=6,
        betas=[1.0],
        alphas=[0.3],
        pop_transition=np.ones((1, 1)),
        pref_transition=np.ones((1, 1)),
        turnover_prob=0.0,
        requests_per_user=4.0,
        mix_lambda=0.5,
    )
    params.update(overrides)
    return EnvironmentConfig(**params)


class TestEnvironment:
    def test_same_seed_same_stream(self):
        cfg = _tiny_env_config(turnover_prob=0.2)
        a = Environment(cfg, np.random.default_rng(42))
        b = Environment(cfg, np.random.default_rng(42))
        for _ in range(30):
            va, vb = a.step(), b.step()
            np.testing.assert_array_equal(va.batch.counts, vb.batch.counts)
            np.testing.assert_array_equal(va.batch.content_seq, vb.batch.content_seq)
            assert (va.pop_index, va.pref_index) == (vb.pop_index, vb.pref_index)

    def test_different_seeds_differ(self):
        cfg = _tiny_env_config()
        a = Environment(cfg, np.random.default_rng(1))
        b = Environment(cfg, np.random.default_rng(2))
        counts_a = np.stack([a.step().batch.counts for _ in range(10)])
        counts_b = np.stack([b.step().batch.counts for _ in range(10)])
        assert not np.array_equal(counts_a, counts_b)

    def test_stationary_stream_matches_analytic_mixture(self):
        """Degenerate chains, no churn: the empirical content frequency over
        1e5 requests stays within total-variation 0.01 of the analytic
        per-user mixture."""
        cfg = _tiny_env_config(requests_per_user=40.0)
        env = Environment(cfg, np.random.default_rng(77))
        p_true = env.popularity.ground_truth()
        affinities = kernel_matrix(
            env.users.traits, env.catalog.features, env.preference.alpha
        )
        weights, _ = request_weights(p_true, affinities, cfg.mix_lambda)
        analytic = weights.mean(axis=0)
        totals = np.zeros(cfg.library_size)
        while totals.sum() < 100_000:
            totals += env.step().batch.counts
        empirical = totals / totals.sum()
        assert 0.5 * np.abs(empirical - analytic).sum() <= 0.01

    def test_observation_matches_recomputation(self):
        cfg = _tiny_env_config(turnover_prob=0.3)
        env = Environment(cfg, np.random.default_rng(5))
        for _ in range(10):
            view = env.step()
            redo = observe(view.batch, env.users, env.catalog, env.preference.alpha)
            np.testing.assert_allclose(view.observation.popularity, redo.popularity)
            np.testing.assert_allclose(view.observation.preference, redo.preference)

    def test_empty_slots_flagged(self):
        cfg = _tiny_env_config(requests_per_user=0.0)
        env = Environment(cfg, np.random.default_rng(6))
        view = env.step()
        assert view.empty
        assert env.empty_slots == 1
        np.testing.assert_allclose(view.observation.popularity, np.full(5, 0.2))
