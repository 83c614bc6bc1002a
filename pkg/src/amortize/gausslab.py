"""Closed-form 2-D Gaussian mismatch laboratory.

A true data distribution pi(x, y) and a model p(x, y) share the likelihood
y|x ~ N(x, Sigma) but differ in their priors over x. A small regressor is
trained on model draws to map y to proposal parameters (mu_q, Sigma_q); the
proposal then drives self-normalized importance sampling whose estimates of
the model posterior degrade as pi's prior moves away from p's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .autodiff import ConfigurationError, Tensor, TrainingError

LOG_2PI = math.log(2.0 * math.pi)


def _check_spd(name: str, mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (2, 2) or not np.allclose(mat, mat.T, atol=1e-12):
        raise ConfigurationError(f"{name} must be a symmetric 2x2 matrix")
    if np.linalg.eigvalsh(mat).min() <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return mat


@dataclass(frozen=True)
class GaussianWorld:
    """True prior (mu_pi, sigma_pi), model prior (mu_p, sigma_p), shared
    likelihood covariance sigma_lik."""

    mu_pi: np.ndarray
    sigma_pi: np.ndarray
    mu_p: np.ndarray
    sigma_p: np.ndarray
    sigma_lik: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_pi", np.asarray(self.mu_pi, dtype=np.float64))
        object.__setattr__(self, "mu_p", np.asarray(self.mu_p, dtype=np.float64))
        if self.mu_pi.shape != (2,) or self.mu_p.shape != (2,):
            raise ConfigurationError("means must be 2-vectors")
        object.__setattr__(self, "sigma_pi", _check_spd("sigma_pi", self.sigma_pi))
        object.__setattr__(self, "sigma_p", _check_spd("sigma_p", self.sigma_p))
        object.__setattr__(self, "sigma_lik", _check_spd("sigma_lik", self.sigma_lik))


def paper_world(mu_pi=(0.0, 0.0)) -> GaussianWorld:
    """Sigma_p = 2I, mu_p = 0, Sigma = Sigma_pi = I; mu_pi selects the scenario."""
    return GaussianWorld(
        mu_pi=np.asarray(mu_pi, dtype=np.float64),
        sigma_pi=np.eye(2),
        mu_p=np.zeros(2),
        sigma_p=2.0 * np.eye(2),
        sigma_lik=np.eye(2),
    )


@dataclass(frozen=True)
class GaussianProposal:
    """Mean and SPD covariance of a 2-D Gaussian."""

    mu: np.ndarray
    sigma: np.ndarray


def analytic_posterior(y: np.ndarray, world: GaussianWorld) -> GaussianProposal:
    """Closed-form model posterior of x given y."""
    y = np.asarray(y, dtype=np.float64)
    prec_p = np.linalg.inv(world.sigma_p)
    prec_l = np.linalg.inv(world.sigma_lik)
    sigma_post = np.linalg.inv(prec_p + prec_l)
    mu_post = sigma_post @ (prec_p @ world.mu_p + prec_l @ y)
    return GaussianProposal(mu=mu_post, sigma=sigma_post)


def simulate_data(
    world: GaussianWorld, source: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral draw (x, y) from the chosen joint: 'true_pi' or 'model_p'."""
    if source == "true_pi":
        mu, sigma = world.mu_pi, world.sigma_pi
    elif source == "model_p":
        mu, sigma = world.mu_p, world.sigma_p
    else:
        raise ConfigurationError(f"unknown source {source!r}")
    x = rng.multivariate_normal(mu, sigma, method="cholesky")
    y = rng.multivariate_normal(x, world.sigma_lik, method="cholesky")
    return x, y


def gaussian_log_density(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Rows of x scored under N(mu, sigma)."""
    x = np.atleast_2d(x)
    chol = np.linalg.cholesky(sigma)
    z = solve_triangular(chol, (x - mu).T, lower=True)
    quad = (z * z).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (quad + logdet + 2 * LOG_2PI)


class GaussianProposalNet:
    """Feed-forward regressor y -> (mu_q, cholesky factor of Sigma_q).

    Two tanh hidden layers; the factor's diagonal goes through exp so the
    covariance is SPD for any raw output.
    """

    def __init__(self, rng: np.random.Generator, hidden: tuple[int, int] = (32, 32)):
        self.hidden = hidden
        self.params: dict[str, Tensor] = {}
        width = 2
        for i, hdim in enumerate(hidden):
            self.params[f"fc{i}.weight"] = ad.parameter((hdim, width), rng=rng, fan_in=width, name=f"fc{i}.weight")
            self.params[f"fc{i}.bias"] = ad.parameter(np.zeros(hdim), name=f"fc{i}.bias")
            width = hdim
        self.params["out.weight"] = ad.parameter((5, width), rng=rng, fan_in=width, name="out.weight")
        self.params["out.bias"] = ad.parameter(np.zeros(5), name="out.bias")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def _forward(self, y: np.ndarray) -> Tensor:
        x = Tensor(np.atleast_2d(y))
        for i in range(len(self.hidden)):
            x = ad.tanh(ad.linear(x, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"]))
        return ad.linear(x, self.params["out.weight"], self.params["out.bias"])

    def nll(self, x: np.ndarray, y: np.ndarray) -> Tensor:
        """Mean negative log density of x under N(mu_q(y), Sigma_q(y))."""
        x = np.atleast_2d(x)
        out = self._forward(y)
        mu1 = ad.slice_last(out, 0, 1)
        mu2 = ad.slice_last(out, 1, 2)
        l11r = ad.slice_last(out, 2, 3)
        l21 = ad.slice_last(out, 3, 4)
        l22r = ad.slice_last(out, 4, 5)
        x1 = Tensor(x[:, :1])
        x2 = Tensor(x[:, 1:2])
        z1 = ad.div(ad.sub(x1, mu1), ad.exp(l11r))
        z2 = ad.div(ad.sub(ad.sub(x2, mu2), ad.mul(l21, z1)), ad.exp(l22r))
        half = Tensor(0.5)
        quad = ad.mul(half, ad.add(ad.mul(z1, z1), ad.mul(z2, z2)))
        nll = ad.add(ad.add(quad, ad.add(l11r, l22r)), Tensor(LOG_2PI))
        return ad.tmean(nll)

    def predict(self, y: np.ndarray) -> GaussianProposal:
        with ad.no_grad():
            out = self._forward(y).data[0]
        chol = np.array([[math.exp(out[2]), 0.0], [out[3], math.exp(out[4])]])
        return GaussianProposal(mu=out[:2].copy(), sigma=chol @ chol.T)

    def predict_chol(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            out = self._forward(y).data[0]
        chol = np.array([[math.exp(out[2]), 0.0], [out[3], math.exp(out[4])]])
        return out[:2].copy(), chol


def train_gaussian_proposal(
    world: GaussianWorld,
    steps: int = 4000,
    batch_size: int = 128,
    *,
    seed: int = 0,
    alpha: float = 2e-3,
    hidden: tuple[int, int] = (32, 32),
) -> GaussianProposalNet:
    """Fit the regressor on fresh draws from the model joint p(x, y) only."""
    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))
    data_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))
    net = GaussianProposalNet(init_rng, hidden=hidden)
    opt = ad.Adam(net.parameters(), alpha=alpha)
    chol_p = np.linalg.cholesky(world.sigma_p)
    chol_l = np.linalg.cholesky(world.sigma_lik)
    for step in range(1, steps + 1):
        # step decay so the head settles instead of bouncing at minibatch noise
        if step == steps // 2:
            opt.alpha = alpha / 3.0
        elif step == (3 * steps) // 4:
            opt.alpha = alpha / 10.0
        x = world.mu_p + data_rng.standard_normal((batch_size, 2)) @ chol_p.T
        y = x + data_rng.standard_normal((batch_size, 2)) @ chol_l.T
        loss = net.nll(x, y)
        if not np.isfinite(loss.item()):
            raise TrainingError(f"non-finite proposal loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    return net


def is_posterior_estimate(
    y: np.ndarray,
    net: GaussianProposalNet,
    world: GaussianWorld,
    m: int = 1000,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Self-normalized IS estimate (mu_tilde, sigma_tilde, ess) of the model
    posterior using the trained proposal; densities are exact here."""
    rng = rng if rng is not None else np.random.default_rng(0)
    y = np.asarray(y, dtype=np.float64)
    mu_q, chol_q = net.predict_chol(y)
    xs = mu_q + rng.standard_normal((m, 2)) @ chol_q.T
    sigma_q = chol_q @ chol_q.T
    logw = (
        gaussian_log_density(xs, world.mu_p, world.sigma_p)
        + gaussian_log_density(xs - y, np.zeros(2), world.sigma_lik)
        - gaussian_log_density(xs, mu_q, sigma_q)
    )
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    mu_tilde = w @ xs
    centered = xs - mu_tilde
    sigma_tilde = (w[:, None] * centered).T @ centered
    ess = float(1.0 / np.sum(w**2))
    return mu_tilde, sigma_tilde, ess


def mismatch_sweep(
    worlds: list[GaussianWorld],
    net: GaussianProposalNet,
    m: int = 1000,
    n_seeds: int = 10,
    base_seed: int = 0,
) -> list[dict]:
    """For each world: draw y from the true process, estimate the model
    posterior by IS, and record estimator errors and ESS per seed."""
    rows = []
    for s_idx, world in enumerate(worlds):
        scenario = f"mu_pi=({world.mu_pi[0]:g} {world.mu_pi[1]:g})"  # comma-free for CSV
        for seed in range(n_seeds):
            ss = np.random.SeedSequence(base_seed, spawn_key=(s_idx, seed))
            rng = np.random.Generator(np.random.PCG64(ss))
            _, y = simulate_data(world, "true_pi", rng)
            mu_t, sigma_t, ess = is_posterior_estimate(y, net, world, m=m, rng=rng)
            post = analytic_posterior(y, world)
            rows.append(
                {
                    "scenario": scenario,
                    "seed": seed,
                    "mu_err": float(np.linalg.norm(mu_t - post.mu)),
                    "sigma_err": float(np.linalg.norm(sigma_t - post.sigma, ord="fro")),
                    "ess": ess,
                }
            )
    return rows
