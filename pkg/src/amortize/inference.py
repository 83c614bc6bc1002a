"""Self-normalized importance sampling over Captcha latents.

Particles are drawn from the trained proposal q(x|y); weights use the model
joint prior(x) * ABC pseudo-likelihood in place of the intractable renderer
density, so w = p(x) * k_abc(y, x) / q(x|y), normalized in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .captcha import DomainError, Latent, RenderError, StyleSpec, log_prior, render_mean


class DegeneratePosteriorError(RuntimeError):
    """Every particle had zero weight; reports the closest render found."""


@dataclass(frozen=True)
class AbcConfig:
    """Gaussian ABC kernel on the Euclidean pixel distance to the mean render."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("ABC bandwidth epsilon must be > 0")

    @classmethod
    def for_style(cls, style: StyleSpec, rel: float = 0.05) -> "AbcConfig":
        # 5% average per-pixel deviation by default
        return cls(epsilon=rel * np.sqrt(style.pixel_count))


@dataclass
class Particle:
    latent: Latent
    log_weight: float
    string: str


@dataclass
class ParticleSet:
    particles: list[Particle]
    weights: np.ndarray  # normalized, sums to 1

    @property
    def m(self) -> int:
        return len(self.particles)

    @classmethod
    def from_log_weights(cls, particles: list[Particle]) -> "ParticleSet":
        logw = np.array([p.log_weight for p in particles], dtype=np.float64)
        finite = np.isfinite(logw)
        if not finite.any():
            raise DegeneratePosteriorError(
                f"all {len(particles)} particles have zero weight"
            )
        shifted = logw - logw[finite].max()  # exp(-inf) underflows cleanly to 0
        w = np.exp(shifted)
        return cls(particles, w / w.sum())


def abc_log_likelihood(
    y: np.ndarray, latent: Latent, style: StyleSpec, cfg: AbcConfig
) -> float:
    """-||y - render_mean(x)||^2 / (2 eps^2); -inf when x cannot render.

    Unnormalized: the kernel constant cancels under self-normalization.
    """
    try:
        mean = render_mean(latent, style)
    except (RenderError, DomainError):
        return -np.inf
    diff = y - mean
    return float(-(diff * diff).sum() / (2.0 * cfg.epsilon**2))


def importance_sample(
    y: np.ndarray,
    proposal,
    style: StyleSpec,
    m: int,
    cfg: AbcConfig,
    rng: np.random.Generator,
) -> ParticleSet:
    """Draw m particles from ``proposal.sample_batch`` and weight them.

    log w = log prior + ABC log likelihood - log q; invalid latents get
    -inf weight rather than aborting the set.
    """
    if m < 1:
        raise ValueError("need at least one particle")
    latents, logq = proposal.sample_batch(y, m, rng)
    particles = []
    best_dist = np.inf
    for lat, lq in zip(latents, logq):
        try:
            lp = log_prior(lat, style)
            ll = abc_log_likelihood(y, lat, style, cfg)
            if np.isfinite(ll):
                best_dist = min(best_dist, np.sqrt(-ll * 2.0) * cfg.epsilon)
            logw = lp + ll - lq
        except DomainError:
            logw = -np.inf
        particles.append(Particle(lat, logw, lat.string(style)))
    try:
        return ParticleSet.from_log_weights(particles)
    except DegeneratePosteriorError as exc:
        raise DegeneratePosteriorError(
            f"{exc}; closest render distance seen: {best_dist}"
        ) from None


def posterior_expectation(ps: ParticleSet, f) -> np.ndarray:
    """Sum_m W_m f(x_m) for a function f: Latent -> scalar or vector."""
    values = np.array([np.atleast_1d(np.asarray(f(p.latent), dtype=np.float64)) for p in ps.particles])
    return np.einsum("m,mk->k", ps.weights, values)


def string_posterior(ps: ParticleSet, top_k: int | None = None) -> list[tuple[str, float]]:
    """Aggregate normalized weight by decoded string, heaviest first."""
    mass: dict[str, float] = {}
    for p, w in zip(ps.particles, ps.weights):
        mass[p.string] = mass.get(p.string, 0.0) + float(w)
    ranked = sorted(mass.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k] if top_k else ranked


def effective_sample_size(ps: ParticleSet) -> float:
    return float(1.0 / np.sum(ps.weights**2))
