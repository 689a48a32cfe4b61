import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, mixture_pdf_loop, rel_err, state_probs_to_mixture_loop
from qmdn.mixture import (
    GaussianMixture,
    log_pdf,
    logsumexp,
    mixture_from_state_probs,
    nll,
    nll_gradient,
    pdf,
    responsibilities,
    sample,
    state_probs_vjp,
)


def random_mixture(rng, k=5, batch=()):
    w = rng.dirichlet(np.ones(k), size=batch or None)
    mu = rng.normal(0, 2, batch + (k,))
    sd = rng.uniform(0.2, 2.0, batch + (k,))
    return GaussianMixture(w, mu, sd)


def unit_normal():
    return GaussianMixture(np.array([1.0]), np.array([0.0]), np.array([1.0]))


class TestGaussianMixture:
    def test_rejects_off_simplex_weights(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([0.5, 0.6]), np.zeros(2), np.ones(2))

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([0.5, 0.5]), np.zeros(2), np.array([1.0, 0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([1.0]), np.zeros(2), np.ones(2))

    def test_rejects_nonfinite_mean(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([1.0]), np.array([np.inf]), np.ones(1))

    def test_batch_indexing(self):
        gm = random_mixture(np.random.default_rng(0), batch=(4,))
        assert len(gm) == 4
        assert gm[2].batch_shape == ()
        np.testing.assert_array_equal(gm[2].means, gm.means[2])


class TestDensity:
    def test_standard_normal_peak(self):
        assert pdf(unit_normal(), 0.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_narrow_component_peak(self):
        gm = GaussianMixture(np.array([1.0]), np.array([1.0]), np.array([0.2]))
        assert pdf(gm, 1.0) == pytest.approx(1.9947114, abs=1e-6)

    def test_log_pdf_standard_normal(self):
        assert log_pdf(unit_normal(), 0.0) == pytest.approx(-0.9189385, abs=1e-7)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            gm = random_mixture(rng)
            y = rng.normal(0, 3)
            assert pdf(gm, y) == pytest.approx(mixture_pdf_loop(gm.weights, gm.means, gm.stds, y), rel=1e-12)

    def test_integrates_to_one(self):
        gm = random_mixture(np.random.default_rng(2))
        ys = np.linspace(-30, 30, 200001)
        assert np.trapezoid(pdf(gm, ys), ys) == pytest.approx(1.0, abs=1e-8)

    def test_log_pdf_matches_naive_on_benign_mixtures(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            gm = random_mixture(rng)
            y = rng.normal(0, 3)
            assert abs(log_pdf(gm, y) - math.log(pdf(gm, y))) < 1e-10

    @pytest.mark.parametrize("dist", [0.0, 1.0, 5.0, 10.0])
    def test_log_pdf_finite_at_sigma_floor(self, dist):
        gm = GaussianMixture(np.array([0.3, 0.7]), np.array([0.0, 0.5]), np.array([1e-4, 1e-4]))
        assert math.isfinite(log_pdf(gm, dist))
        batch = GaussianMixture(gm.weights[None], gm.means[None], gm.stds[None])
        assert math.isfinite(nll(batch, np.array([dist])))

    def test_logsumexp_extremes(self):
        assert logsumexp(np.array([-1e4, -1e4])) == pytest.approx(-1e4 + math.log(2))
        assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
        assert logsumexp(np.array([1000.0, 0.0])) == pytest.approx(1000.0)

    def test_responsibilities_sum_to_one(self):
        gm = random_mixture(np.random.default_rng(4), batch=(10,))
        r = responsibilities(gm, np.linspace(-2, 2, 10))
        np.testing.assert_allclose(r.sum(axis=-1), 1.0, atol=1e-12)


class TestNll:
    def test_standard_normal_at_mean(self):
        gm = GaussianMixture(np.array([[1.0]]), np.array([[0.0]]), np.array([[1.0]]))
        assert nll(gm, np.array([0.0])) == pytest.approx(0.9189385, abs=1e-7)

    def test_list_of_mixtures(self):
        rng = np.random.default_rng(5)
        gms = [random_mixture(rng) for _ in range(3)]
        ys = np.array([0.1, -0.3, 1.2])
        expected = -np.mean([log_pdf(g, y) for g, y in zip(gms, ys)])
        assert nll(gms, ys) == pytest.approx(expected, rel=1e-14)

    def test_duplicating_the_batch_leaves_mean_unchanged(self):
        rng = np.random.default_rng(6)
        gms = [random_mixture(rng) for _ in range(4)]
        ys = rng.normal(size=4)
        assert nll(gms + gms, np.concatenate([ys, ys])) == pytest.approx(nll(gms, ys), rel=1e-14)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            nll([], np.array([]))

    def test_length_mismatch(self):
        gm = random_mixture(np.random.default_rng(7), batch=(3,))
        with pytest.raises(ValueError):
            nll(gm, np.zeros(2))

    def test_monte_carlo_matches_entropy(self):
        # the expected NLL of samples drawn from the model is its differential entropy
        gm = GaussianMixture(np.array([0.3, 0.7]), np.array([-1.0, 1.5]), np.array([0.5, 0.8]))
        grid = np.linspace(-12, 12, 400001)
        p = pdf(gm, grid)
        entropy = -np.trapezoid(np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0), grid)
        ys = sample(gm, np.random.default_rng(8), size=200000)
        per_sample = -log_pdf(gm, ys)
        stderr = per_sample.std() / math.sqrt(ys.size)
        assert abs(per_sample.mean() - entropy) < 4 * stderr


class TestNllGradient:
    @staticmethod
    def _flat_loss(k, y):
        def f(v):
            w, mu, sd = v[:k], v[k : 2 * k], v[2 * k :]
            return -math.log(mixture_pdf_loop(w, mu, sd, y))

        return f

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(100):
            gm = random_mixture(rng)
            y = rng.normal(0, 2)
            loss, d_w, d_mu, d_sd = nll_gradient(gm, y)
            v = np.concatenate([gm.weights, gm.means, gm.stds])
            fd = central_difference(self._flat_loss(5, y), v)
            assert loss == pytest.approx(-log_pdf(gm, y), rel=1e-12)
            worst = max(worst, rel_err(np.concatenate([d_w, d_mu, d_sd]), fd))
        assert worst < 1e-6

    def test_stationary_for_single_gaussian_at_mean(self):
        _, _, d_mu, d_sd = nll_gradient(unit_normal(), 0.0)
        assert d_mu[0] == 0.0
        # d/dsigma of log(sigma) + y^2/(2 sigma^2) at y=0 is 1/sigma
        assert d_sd[0] == pytest.approx(1.0)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(10)
        gm = random_mixture(rng, batch=(6,))
        ys = rng.normal(size=6)
        batched = nll_gradient(gm, ys)
        for b in range(6):
            single = nll_gradient(gm[b], ys[b])
            for a, s in zip(batched, single):
                np.testing.assert_allclose(np.asarray(a)[b], s, rtol=1e-13)


class TestSampling:
    def test_degenerate_weights(self):
        gm = GaussianMixture(np.array([0.0, 1.0]), np.array([-50.0, 3.0]), np.array([0.1, 0.1]))
        ys = sample(gm, np.random.default_rng(11), size=1000)
        assert np.all(np.abs(ys - 3.0) < 1.0)

    def test_component_frequencies(self):
        w = np.array([0.2, 0.5, 0.3])
        gm = GaussianMixture(w, np.array([-10.0, 0.0, 10.0]), np.full(3, 0.5))
        n = 20000
        ys = sample(gm, np.random.default_rng(12), size=n)
        counts = np.bincount(np.argmin(np.abs(ys[:, None] - gm.means), axis=1), minlength=3)
        bound = 4 * np.sqrt(n * w * (1 - w))
        assert np.all(np.abs(counts - n * w) < bound)

    def test_reproducible(self):
        gm = random_mixture(np.random.default_rng(13))
        a = sample(gm, np.random.default_rng(14), size=50)
        b = sample(gm, np.random.default_rng(14), size=50)
        assert np.array_equal(a, b)

    def test_batched_draw_one_per_element(self):
        gm = GaussianMixture(
            np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[-5.0, 5.0], [-5.0, 5.0]]), np.full((2, 2), 0.01)
        )
        ys = sample(gm, np.random.default_rng(15))
        assert ys.shape == (2,)
        assert ys[0] == pytest.approx(-5.0, abs=0.1)
        assert ys[1] == pytest.approx(5.0, abs=0.1)


simplex8 = st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8).map(lambda v: np.array(v) / np.sum(v))


class TestStateProbsMapping:
    def test_uniform_inputs(self):
        u = np.full(8, 1 / 8)
        gm = mixture_from_state_probs(u, u, u)
        assert np.all(gm.weights == 1 / 7)
        assert np.all(gm.means == 0.0)
        assert np.all(gm.stds == 1.0)

    def test_sigma_scale_applies_to_stds_only(self):
        u = np.full(8, 1 / 8)
        gm = mixture_from_state_probs(u, u, u, sigma_scale=0.3)
        np.testing.assert_allclose(gm.stds, 0.3)
        assert np.all(gm.means == 0.0)

    def test_clamp_keeps_means_finite(self):
        pm = np.zeros(8)
        pm[0] = 1.0
        gm = mixture_from_state_probs(np.full(8, 1 / 8), pm, np.full(8, 1 / 8))
        assert gm.means[0] == pytest.approx(math.log(1e10), rel=1e-12)
        assert np.all(np.isfinite(gm.means))
        # the weight and std maps see clamped, not zero, probabilities
        assert np.all(gm.means[1:] == 0.0)

    def test_sigma_floor(self):
        ps = np.zeros(8)
        ps[-1] = 1.0
        gm = mixture_from_state_probs(np.full(8, 1 / 8), np.full(8, 1 / 8), ps, sigma_scale=2.0)
        np.testing.assert_allclose(gm.stds, 2e-4)

    def test_last_state_near_one_keeps_weights_on_simplex(self):
        pa = np.full(8, 1e-13)
        pa[-1] = 1 - 7e-13
        gm = mixture_from_state_probs(pa, np.full(8, 1 / 8), np.full(8, 1 / 8))
        assert abs(gm.weights.sum() - 1) < 1e-12

    def test_rejects_non_simplex(self):
        with pytest.raises(ValueError):
            mixture_from_state_probs(np.full(8, 0.2), np.full(8, 1 / 8), np.full(8, 1 / 8))
        with pytest.raises(ValueError):
            mixture_from_state_probs(np.full(8, 1 / 8), -np.full(8, 1 / 8), np.full(8, 1 / 8))

    @settings(max_examples=50)
    @given(simplex8, simplex8, simplex8)
    def test_matches_loop_oracle(self, pa, pm, ps):
        gm = mixture_from_state_probs(pa, pm, ps, sigma_scale=0.7)
        w, mu, sd = state_probs_to_mixture_loop(pa, pm, ps, sigma_scale=0.7)
        np.testing.assert_allclose(gm.weights, w, rtol=1e-9)
        np.testing.assert_allclose(gm.means, mu, atol=1e-12)
        np.testing.assert_allclose(gm.stds, sd, rtol=1e-12)

    @settings(max_examples=50)
    @given(simplex8, simplex8, simplex8)
    def test_outputs_are_valid(self, pa, pm, ps):
        gm = mixture_from_state_probs(pa, pm, ps)
        assert gm.n_components == 7
        assert abs(gm.weights.sum() - 1) < 1e-12
        assert np.all(gm.stds >= 1e-4)

    @settings(max_examples=50)
    @given(simplex8, simplex8, simplex8, st.floats(0.05, 1.0))
    def test_only_ratios_matter(self, pa, pm, ps, c):
        a = mixture_from_state_probs(pa, pm, ps)
        b = mixture_from_state_probs(c * pa, c * pm, c * ps, validate=False)
        np.testing.assert_allclose(b.weights, a.weights, rtol=1e-12)
        np.testing.assert_allclose(b.means, a.means, atol=1e-12)
        np.testing.assert_allclose(b.stds, a.stds, rtol=1e-12)

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            probs = rng.dirichlet(np.ones(8), size=3)
            y = rng.normal()
            gm, cache = mixture_from_state_probs(*probs, sigma_scale=0.8, return_cache=True)
            _, d_w, d_mu, d_sd = nll_gradient(gm, y)
            grads = np.concatenate(state_probs_vjp(cache, d_w, d_mu, d_sd))

            def f(v):
                m = mixture_from_state_probs(*v.reshape(3, 8), sigma_scale=0.8, validate=False)
                return -math.log(mixture_pdf_loop(m.weights, m.means, m.stds, y))

            fd = central_difference(f, probs.ravel(), h=1e-7)
            # the last alpha coordinate is not read (summed denominator), so it carries no gradient
            assert grads[7] == 0.0
            assert rel_err(grads, fd) < 1e-5

    def test_vjp_zero_through_clamped_entries(self):
        pm = np.zeros(8)
        pm[[0, 7]] = 0.5
        gm, cache = mixture_from_state_probs(np.full(8, 1 / 8), pm, np.full(8, 1 / 8), return_cache=True)
        _, d_w, d_mu, d_sd = nll_gradient(gm, 0.3)
        _, g_m, _ = state_probs_vjp(cache, d_w, d_mu, d_sd)
        assert np.all(g_m[1:7] == 0.0)
        assert g_m[0] != 0.0
