"""Independent reference computations the tests compare against.

Everything here is deliberately brute force: central finite differences,
exhaustive latent enumeration, dense 2-D grid integration. None of it calls
the code paths it is used to check.
"""

import numpy as np

from amortize.captcha import enumerate_latents, log_prior, render_mean
from amortize.inference import abc_log_likelihood


def finite_difference(f, arrays, h=1e-5):
    """Central differences of scalar f() with respect to each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def gradcheck(make_loss, params, tol=1e-4, h=1e-5):
    """Max relative disagreement between reverse mode and finite differences.

    Relative scale is max(|analytic|, |numeric|) with a small absolute floor
    so exact zeros compare cleanly.
    """
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    numeric = finite_difference(lambda: make_loss().item(), [p.data for p in params], h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    assert worst < tol, f"gradient mismatch: {worst:.3e} >= {tol}"
    return worst


def brute_force_maxpool(x):
    """Per-window 2x2/stride-2 maximum by explicit loops."""
    *lead, h, w = x.shape
    out = np.empty(tuple(lead) + (h // 2, w // 2))
    for idx in np.ndindex(*lead):
        for i in range(h // 2):
            for j in range(w // 2):
                out[idx + (i, j)] = x[idx][2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def enumeration_posterior(y, style, cfg):
    """Exact ABC posterior over all latents of a small style.

    Returns (latents, probabilities) with weights prior * kernel normalized
    by direct summation.
    """
    latents = list(enumerate_latents(style))
    logw = np.array(
        [log_prior(x, style) + abc_log_likelihood(y, x, style, cfg) for x in latents]
    )
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return latents, w


def enumeration_string_posterior(y, style, cfg):
    latents, w = enumeration_posterior(y, style, cfg)
    mass = {}
    for lat, wi in zip(latents, w):
        s = lat.string(style)
        mass[s] = mass.get(s, 0.0) + float(wi)
    return mass


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def grid_posterior_moments(y, world, lo=-10.0, hi=10.0, step=0.05):
    """Bayes-rule posterior mean/covariance by dense 2-D grid integration."""
    axis = np.arange(lo, hi + step / 2, step)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def log_gauss(v, mu, sigma):
        d = v - mu
        prec = np.linalg.inv(sigma)
        quad = np.einsum("ni,ij,nj->n", d, prec, d)
        return -0.5 * (quad + np.log(np.linalg.det(sigma)) + 2 * np.log(2 * np.pi))

    logp = log_gauss(pts, world.mu_p, world.sigma_p) + log_gauss(
        pts, np.asarray(y, dtype=float), world.sigma_lik
    )
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean = w @ pts
    centered = pts - mean
    cov = (w[:, None] * centered).T @ centered
    return mean, cov
