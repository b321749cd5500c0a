import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valvetune import acquisition as acq
from valvetune.acquisition import (AcquisitionConfig, EntropySearch, ExpectedImprovement, PminGrid,
                                   build_representer_grid, ei, es_expected_dH, es_pmin,
                                   estimate_incumbent, maximize_acquisition, relative_entropy)
from valvetune.gp import Dataset, GpHyper, GpPosterior, KernelSpec


def posterior(n=8, dim=2, seed=0, noise=0.05, ls=0.3):
    rng = np.random.default_rng(seed)
    X = rng.random((n, dim))
    y = np.sum((X - 0.4) ** 2, axis=1) + noise * rng.standard_normal(n)
    hyper = GpHyper(KernelSpec("se", (ls,) * dim, 0.3), noise_std=noise, prior_mean=0.2)
    return GpPosterior(Dataset(X, y), hyper)


class TestExpectedImprovement:
    def test_zero_sigma_limit(self):
        np.testing.assert_allclose(ei([0.1, 0.5], [0.0, 0.0], 0.3), [0.2, 0.0])

    def test_symmetric_point(self):
        # at mu == eta the closed form is sigma / sqrt(2 pi)
        assert ei(1.0, 2.0, 1.0) == pytest.approx(2.0 / np.sqrt(2 * np.pi), rel=1e-14)

    @given(st.floats(-3, 3), st.floats(1e-3, 3), st.floats(-3, 3))
    def test_bounds_and_monotonicity(self, mu, sigma, eta):
        v = ei(mu, sigma, eta)
        assert v >= max(0.0, eta - mu) - 1e-12
        assert ei(mu, 2 * sigma, eta) >= v - 1e-12
        assert ei(mu, sigma, eta + 0.1) >= v

    def test_eta_defaults_to_best_observed(self):
        post = posterior()
        assert ExpectedImprovement(post).eta == pytest.approx(post.dataset.y.min())

    def test_empty_data_uses_prior_mean(self):
        hyper = GpHyper(KernelSpec("se", (0.3, 0.3), 1.0), noise_std=0.1, prior_mean=0.7)
        assert ExpectedImprovement(GpPosterior(Dataset.empty(2), hyper)).eta == 0.7


class TestBelief:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            PminGrid(np.zeros((2, 2)), np.array([0.6, 0.6]))
        with pytest.raises(ValueError):
            PminGrid(np.zeros((2, 2)), np.array([1.0]))

    def test_relative_entropy_extremes(self):
        assert relative_entropy(np.full(10, 0.1)) == pytest.approx(0.0, abs=1e-15)
        assert relative_entropy(np.eye(10)[3]) == pytest.approx(np.log(10))

    def test_argmin_counts_match_loop(self):
        rng = np.random.default_rng(1)
        F = rng.standard_normal((3, 50, 7))
        got = acq._argmin_counts(F, 7)
        want = np.zeros((3, 7))
        for k in range(3):
            for s in range(50):
                want[k, np.argmin(F[k, s])] += 1 / 50
        np.testing.assert_allclose(got, want, atol=1e-15)

    def test_pmin_sums_to_one_and_is_seeded(self):
        post = posterior()
        grid = build_representer_grid(post, 50, seed=3)
        a = es_pmin(post, grid, 300, seed=4)
        b = es_pmin(post, grid, 300, seed=4)
        assert a.mass.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(a.mass, b.mass)

    def test_representers_are_distinct_and_favour_low_cost(self):
        post = posterior(n=12)
        grid = build_representer_grid(post, 100, seed=0)
        assert len(np.unique(grid.points, axis=0)) == 100
        assert np.all((grid.points >= 0) & (grid.points <= 1))
        uniform = np.random.default_rng(9).random((2000, 2))
        eta = post.dataset.y.min()
        mu, var = post.predict(grid.points)
        mu_u, var_u = post.predict(uniform)
        assert ei(mu, np.sqrt(var), eta).mean() > ei(mu_u, np.sqrt(var_u), eta).mean()

    def test_flat_posterior_gives_uniform_proposal(self):
        hyper = GpHyper(KernelSpec("se", (0.3, 0.3), 1.0), noise_std=0.1)
        grid = build_representer_grid(GpPosterior(Dataset.empty(2), hyper), 20, seed=0)
        np.testing.assert_allclose(grid.mass, 1 / 20)


@pytest.fixture(scope="module")
def setup():
    post = posterior(n=10, seed=2)
    grid = build_representer_grid(post, 60, seed=1)
    return post, grid, EntropySearch(post, grid, 300, 9, seed=5)


class TestEntropySearch:
    def test_no_gain_where_nothing_is_uncertain(self):
        rng = np.random.default_rng(0)
        X = rng.random((6, 2))
        hyper = GpHyper(KernelSpec("se", (0.3, 0.3), 1.0), noise_std=1e-6)
        post = GpPosterior(Dataset(X, np.sin(3 * X[:, 0])), hyper)
        grid = build_representer_grid(post, 30, seed=0)
        es = EntropySearch(post, grid, 200, 9, seed=0)
        # at an exactly observed point a new noisy reading shifts the draws by ~0
        assert abs(es(X[:1])[0]) < 1e-6

    @settings(max_examples=20)
    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
    def test_gain_not_below_error(self, setup, x):
        _, _, es = setup
        alpha = es(np.array([x]))[0]
        assert alpha >= -es.last_error[0]

    def test_batch_matches_single(self, setup):
        _, _, es = setup
        X = np.random.default_rng(3).random((5, 2))
        batch = es(X)
        single = [es(X[i:i + 1])[0] for i in range(5)]
        np.testing.assert_allclose(batch, single, rtol=1e-12)

    def test_seeded(self, setup):
        post, grid, es = setup
        other = EntropySearch(post, grid, 300, 9, seed=5)
        X = np.random.default_rng(4).random((4, 2))
        np.testing.assert_array_equal(es(X), other(X))

    def test_fantasy_average_recovers_belief(self, setup):
        # the mixture of fantasized beliefs is the current belief, up to the
        # reported error
        _, _, es = setup
        es(np.random.default_rng(5).random((10, 2)))
        assert np.all(es.last_error < 0.1)

    def test_monte_carlo_fantasies_agree(self, setup):
        post, grid, _ = setup
        x = np.array([[0.4, 0.4]])
        quad = EntropySearch(post, grid, 300, 9, seed=5)(x)[0]
        mc = EntropySearch(post, grid, 300, 400, seed=5, fantasy="montecarlo")(x)[0]
        assert mc == pytest.approx(quad, abs=0.05)

    def test_convenience_wrapper(self, setup):
        post, grid, _ = setup
        cfg = AcquisitionConfig(n_function_samples=300, n_fantasies=9, seed=5)
        alpha, err = es_expected_dH(post, [0.3, 0.6], grid, cfg)
        es = EntropySearch(post, grid, 300, 9, seed=5)
        assert alpha == es(np.array([[0.3, 0.6]]))[0]
        assert err == es.last_error[0]


class TestOptimizers:
    def test_finds_smooth_maximum(self):
        c = np.array([0.3, 0.7, 0.55])

        def f(X):
            return -np.sum((np.atleast_2d(X) - c) ** 2, axis=1)

        x, v = maximize_acquisition(f, 3, n_starts=10, seed=0, n_local=2)
        np.testing.assert_allclose(x, c, atol=1e-5)
        assert v == pytest.approx(0.0, abs=1e-9)

    def test_ties_break_lexicographically(self):
        def flat(X):
            return np.zeros(len(np.atleast_2d(X)))

        extra = np.array([[0.0, 0.5], [0.0, 0.2]])
        x, _ = maximize_acquisition(flat, 2, n_starts=5, seed=0, extra_points=extra, n_local=1)
        np.testing.assert_array_equal(x, [0.0, 0.2])

    def test_ties_prefer_low_tiebreak(self):
        def flat(X):
            return np.zeros(len(np.atleast_2d(X)))

        extra = np.array([[0.0, 0.5], [0.0, 0.2]])
        x, _ = maximize_acquisition(flat, 2, n_starts=5, seed=0, extra_points=extra, n_local=1,
                                    tiebreak=lambda X: -X[:, 1])
        assert x[1] >= 0.5

    def test_nelder_mead_stays_in_cube(self):
        def f(X):
            return np.sum(np.atleast_2d(X), axis=1)

        x, _ = maximize_acquisition(f, 2, n_starts=4, seed=1, n_local=2, method="Nelder-Mead")
        assert np.all((x >= 0) & (x <= 1))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)

    def test_incumbent_minimizes_posterior_mean(self):
        post = posterior(n=12, seed=3)
        x = estimate_incumbent(post, 20, seed=0)
        g = np.linspace(0, 1, 201)
        G = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        assert post.mean(x[None])[0] <= post.mean(G).min() + 1e-9

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AcquisitionConfig(kind="UCB")
        with pytest.raises(ValueError):
            AcquisitionConfig(n_starts=0)
