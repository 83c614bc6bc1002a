"""Gaussian mismatch lab: closed-form posterior, trained proposal, IS estimates."""

import math

import numpy as np
import pytest

from amortize import gausslab as gl
from amortize.autodiff import ConfigurationError

from .oracles import gradcheck, grid_posterior_moments


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


@pytest.fixture(scope="module")
def trained_net():
    return gl.train_gaussian_proposal(gl.paper_world(), steps=12000, batch_size=128, seed=0, alpha=3e-3)


class ExactPosteriorProposal:
    """predict_chol drop-in that returns the analytic posterior."""

    def __init__(self, world):
        self.world = world

    def predict_chol(self, y):
        post = gl.analytic_posterior(y, self.world)
        return post.mu, np.linalg.cholesky(post.sigma)


class TestAnalyticPosterior:
    def test_paper_world_covariance(self):
        post = gl.analytic_posterior(np.zeros(2), gl.paper_world())
        np.testing.assert_allclose(post.sigma, (2.0 / 3.0) * np.eye(2), atol=1e-12)

    def test_paper_world_mean(self):
        post = gl.analytic_posterior(np.array([3.0, 0.0]), gl.paper_world())
        np.testing.assert_allclose(post.mu, [2.0, 0.0], atol=1e-12)

    def test_flat_prior_limit_returns_observation(self):
        world = gl.GaussianWorld(
            mu_pi=np.zeros(2),
            sigma_pi=np.eye(2),
            mu_p=np.array([5.0, -7.0]),
            sigma_p=1e12 * np.eye(2),
            sigma_lik=np.eye(2),
        )
        post = gl.analytic_posterior(np.array([1.5, -0.5]), world)
        np.testing.assert_allclose(post.mu, [1.5, -0.5], atol=1e-9)

    def test_invalid_covariance_rejected(self):
        with pytest.raises(ConfigurationError):
            gl.GaussianWorld(
                mu_pi=np.zeros(2),
                sigma_pi=np.eye(2),
                mu_p=np.zeros(2),
                sigma_p=np.array([[1.0, 2.0], [2.0, 1.0]]),  # indefinite
                sigma_lik=np.eye(2),
            )

    @pytest.mark.parametrize("seed", range(20))
    def test_agrees_with_grid_integration(self, seed):
        rng = rng_for(seed)
        def random_spd(scale):
            a = rng.normal(size=(2, 2)) * scale
            return a @ a.T + 0.3 * np.eye(2)
        world = gl.GaussianWorld(
            mu_pi=np.zeros(2),
            sigma_pi=np.eye(2),
            mu_p=rng.uniform(-2, 2, size=2),
            sigma_p=random_spd(0.8),
            sigma_lik=random_spd(0.6),
        )
        y = rng.uniform(-2, 2, size=2)
        post = gl.analytic_posterior(y, world)
        mean, cov = grid_posterior_moments(y, world)
        np.testing.assert_allclose(post.mu, mean, atol=1e-3)
        np.testing.assert_allclose(post.sigma, cov, atol=1e-3)


class TestSimulateData:
    def test_true_prior_mean(self):
        world = gl.paper_world(mu_pi=(5.0, 0.0))
        rng = rng_for(0)
        xs = np.array([gl.simulate_data(world, "true_pi", rng)[0] for _ in range(100_000)])
        np.testing.assert_allclose(xs.mean(axis=0), [5.0, 0.0], atol=0.02)

    def test_model_prior_covariance(self):
        world = gl.paper_world()
        rng = rng_for(1)
        xs = np.array([gl.simulate_data(world, "model_p", rng)[0] for _ in range(100_000)])
        cov = np.cov(xs.T)
        np.testing.assert_allclose(cov, 2.0 * np.eye(2), rtol=0.05, atol=0.05)

    def test_seed_reproducibility(self):
        world = gl.paper_world()
        a = gl.simulate_data(world, "true_pi", rng_for(7))
        b = gl.simulate_data(world, "true_pi", rng_for(7))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_unknown_source_rejected(self):
        with pytest.raises(ConfigurationError):
            gl.simulate_data(gl.paper_world(), "nope", rng_for(0))


class TestProposalNetTraining:
    def test_nll_head_gradient(self):
        rng = rng_for(3)
        net = gl.GaussianProposalNet(rng, hidden=(6, 6))
        x = rng.normal(size=(3, 2))
        y = rng.normal(size=(3, 2))
        gradcheck(lambda: net.nll(x, y), net.parameters(), tol=1e-4)

    def test_converges_to_analytic_posterior_at_origin(self, trained_net):
        world = gl.paper_world()
        pred = trained_net.predict(np.zeros(2))
        post = gl.analytic_posterior(np.zeros(2), world)
        assert np.linalg.norm(pred.mu - post.mu) < 0.1
        assert np.linalg.norm(pred.sigma - post.sigma, ord="fro") < 0.15

    def test_mean_errors_over_test_set(self, trained_net):
        world = gl.paper_world()
        rng = rng_for(4)
        mu_errs, sig_errs = [], []
        for _ in range(100):
            _, y = gl.simulate_data(world, "model_p", rng)
            pred = trained_net.predict(y)
            post = gl.analytic_posterior(y, world)
            mu_errs.append(np.linalg.norm(pred.mu - post.mu))
            sig_errs.append(np.linalg.norm(pred.sigma - post.sigma, ord="fro"))
        assert np.mean(mu_errs) < 0.1
        assert np.mean(sig_errs) < 0.15

    def test_nll_respects_posterior_entropy_bound(self, trained_net):
        # cross-entropy >= H(x|y) = entropy of N(sigma_post)
        world = gl.paper_world()
        rng = rng_for(5)
        xs, ys = [], []
        for _ in range(4000):
            x, y = gl.simulate_data(world, "model_p", rng)
            xs.append(x)
            ys.append(y)
        nll = trained_net.nll(np.array(xs), np.array(ys)).item()
        sigma_post = gl.analytic_posterior(np.zeros(2), world).sigma
        entropy = 0.5 * math.log(np.linalg.det(2 * math.pi * math.e * sigma_post))
        assert nll > entropy - 0.02
        assert nll < entropy + 0.1  # trained close to the optimum

    def test_sigma_q_is_spd(self, trained_net):
        rng = rng_for(6)
        for _ in range(20):
            y = rng.uniform(-8, 8, size=2)
            sigma = trained_net.predict(y).sigma
            assert np.linalg.eigvalsh(sigma).min() > 0


class TestIsPosteriorEstimate:
    def test_exact_proposal_uniform_weights_and_root_m_rate(self):
        world = gl.paper_world()
        mock = ExactPosteriorProposal(world)
        y = np.array([1.0, -2.0])
        post = gl.analytic_posterior(y, world)
        mu_t, _, ess = gl.is_posterior_estimate(y, mock, world, m=1000, rng=rng_for(0))
        assert ess == pytest.approx(1000.0, abs=1e-6)
        # error scale ~ sqrt(tr(sigma_post)/m)
        assert np.linalg.norm(mu_t - post.mu) < 3 * math.sqrt(post.sigma.trace() / 1000)

    def test_unbiased_with_exact_proposal(self):
        world = gl.paper_world()
        mock = ExactPosteriorProposal(world)
        y = np.array([0.5, 0.5])
        post = gl.analytic_posterior(y, world)
        ests = np.array(
            [gl.is_posterior_estimate(y, mock, world, m=200, rng=rng_for(s))[0] for s in range(100)]
        )
        se = ests.std(axis=0) / math.sqrt(100)
        assert np.all(np.abs(ests.mean(axis=0) - post.mu) <= 3 * se + 1e-12)

    def test_matched_scenario_error(self, trained_net):
        world = gl.paper_world()
        errs = []
        for seed in range(10):
            rng = rng_for(200 + seed)
            _, y = gl.simulate_data(world, "true_pi", rng)
            mu_t, _, _ = gl.is_posterior_estimate(y, trained_net, world, m=1000, rng=rng)
            post = gl.analytic_posterior(y, world)
            errs.append(np.linalg.norm(mu_t - post.mu))
        assert np.median(errs) < 0.1

    def test_ess_decreases_under_mean_shift(self):
        world = gl.paper_world()
        y = np.array([0.0, 0.0])
        post = gl.analytic_posterior(y, world)
        chol = np.linalg.cholesky(post.sigma)

        class Shifted:
            def __init__(self, t):
                self.t = t

            def predict_chol(self, _y):
                return post.mu + self.t * np.array([1.0, 0.0]), chol

        for direction in (np.array([1.0, 0.0]), np.array([-0.5, 0.5])):
            esses = []
            for t in (0.0, 0.75, 1.5, 3.0):
                class Ray:
                    def predict_chol(self, _y, t=t, d=direction):
                        return post.mu + t * d, chol
                ess = np.median(
                    [gl.is_posterior_estimate(y, Ray(), world, m=2000, rng=rng_for(s))[2] for s in range(5)]
                )
                esses.append(ess)
            assert all(a > b for a, b in zip(esses, esses[1:]))


class TestMismatchSweep:
    def test_row_shape_and_scenarios(self, trained_net):
        worlds = [gl.paper_world(m) for m in ([0, 0], [5, 0], [8, 0])]
        rows = gl.mismatch_sweep(worlds, trained_net, m=400, n_seeds=4, base_seed=1)
        assert len(rows) == 12
        assert sorted({r["scenario"] for r in rows}) == [
            "mu_pi=(0 0)",
            "mu_pi=(5 0)",
            "mu_pi=(8 0)",
        ]
        assert all(set(r) == {"scenario", "seed", "mu_err", "sigma_err", "ess"} for r in rows)

    def test_error_grows_with_mismatch(self, trained_net):
        worlds = [gl.paper_world(m) for m in ([0, 0], [8, 0])]
        rows = gl.mismatch_sweep(worlds, trained_net, m=1000, n_seeds=10, base_seed=2)
        matched = np.median([r["mu_err"] for r in rows if r["scenario"] == "mu_pi=(0 0)"])
        broken = np.median([r["mu_err"] for r in rows if r["scenario"] == "mu_pi=(8 0)"])
        assert matched < broken

    def test_ess_strictly_decreasing_across_scenarios(self, trained_net):
        worlds = [gl.paper_world(m) for m in ([0, 0], [5, 0], [8, 0])]
        rows = gl.mismatch_sweep(worlds, trained_net, m=1000, n_seeds=10, base_seed=3)
        medians = [
            np.median([r["ess"] for r in rows if r["scenario"] == sc])
            for sc in ("mu_pi=(0 0)", "mu_pi=(5 0)", "mu_pi=(8 0)")
        ]
        assert medians[0] > medians[1] > medians[2]
