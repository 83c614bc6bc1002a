"""Per-style synthetic Captcha model: uniform prior over structured latents
plus a stochastic renderer (glyph compositing, rotation, elastic warp, noise).

A latent is ``{L, eps_1:K, i_1:L}``: letter count, integer render parameters,
and letter identities. Epsilon slot 0 is the kerning offset in pixels; slot 1,
when present, is a rotation index (angle = index * rotation_step_deg); any
further slots are inert configuration the renderer ignores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.ndimage import gaussian_filter

from .fonts import GLYPH_HEIGHT, GLYPH_WIDTH, GLYPHS, glyph_bitmap


class StyleError(ValueError):
    """Invalid style configuration."""


class DomainError(ValueError):
    """Latent outside the style's domains."""


class RenderError(ValueError):
    """Latent cannot be composited onto the canvas."""


@dataclass(frozen=True)
class ElasticConfig:
    alpha: float = 0.0
    sigma_field: float = 3.0
    enabled: bool = False


@dataclass(frozen=True)
class StyleSpec:
    """One Captcha scheme: prior intervals, glyphs, deformation and noise."""

    style_id: str
    alphabet: str
    l_min: int
    l_max: int
    epsilon_domains: tuple[tuple[int, ...], ...]
    canvas_h: int
    canvas_w: int
    glyph_scale: int = 1
    noise_sigma: float = 0.0  # on the 0..255 intensity scale
    elastic: ElasticConfig = field(default_factory=ElasticConfig)
    rotation_step_deg: float = 5.0
    margin_x: int = 4

    def __post_init__(self):
        if not self.alphabet:
            raise StyleError("alphabet must be non-empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise StyleError("alphabet has repeated characters")
        missing = [c for c in self.alphabet if c not in GLYPHS]
        if missing:
            raise StyleError(f"no glyphs for characters {missing}")
        if not (1 <= self.l_min <= self.l_max):
            raise StyleError(f"bad letter-count interval [{self.l_min}, {self.l_max}]")
        if any(len(d) == 0 for d in self.epsilon_domains):
            raise StyleError("every epsilon domain must be non-empty")
        if self.glyph_scale < 1:
            raise StyleError("glyph_scale must be >= 1")
        if self.noise_sigma < 0:
            raise StyleError("noise_sigma must be >= 0")
        if self.elastic.alpha < 0 or self.elastic.sigma_field <= 0:
            raise StyleError("elastic needs alpha >= 0 and sigma_field > 0")
        cw = self.cell_w
        max_kern = max(self.kerning_domain)
        min_kern = min(self.kerning_domain)
        if min_kern <= -cw:
            raise StyleError(f"kerning {min_kern} collapses {cw}px glyph cells")
        widest = self.margin_x + self.l_max * cw + (self.l_max - 1) * max_kern
        if widest > self.canvas_w or self.cell_h > self.canvas_h:
            raise StyleError(
                f"glyphs do not fit canvas: need {widest}x{self.cell_h}, "
                f"have {self.canvas_w}x{self.canvas_h}"
            )

    @property
    def k(self) -> int:
        return len(self.epsilon_domains)

    @property
    def cell_w(self) -> int:
        return GLYPH_WIDTH * self.glyph_scale

    @property
    def cell_h(self) -> int:
        return GLYPH_HEIGHT * self.glyph_scale

    @property
    def kerning_domain(self) -> tuple[int, ...]:
        return self.epsilon_domains[0] if self.epsilon_domains else (0,)

    @property
    def l_domain_size(self) -> int:
        return self.l_max - self.l_min + 1

    @property
    def pixel_count(self) -> int:
        return self.canvas_h * self.canvas_w

    def to_json_dict(self) -> dict:
        return {
            "style_id": self.style_id,
            "alphabet": self.alphabet,
            "l_min": self.l_min,
            "l_max": self.l_max,
            "epsilon_domains": [list(d) for d in self.epsilon_domains],
            "canvas_h": self.canvas_h,
            "canvas_w": self.canvas_w,
            "glyph_scale": self.glyph_scale,
            "noise_sigma": self.noise_sigma,
            "elastic": {
                "alpha": self.elastic.alpha,
                "sigma_field": self.elastic.sigma_field,
                "enabled": self.elastic.enabled,
            },
            "rotation_step_deg": self.rotation_step_deg,
            "margin_x": self.margin_x,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "StyleSpec":
        try:
            el = d.get("elastic", {})
            return cls(
                style_id=d.get("style_id", "unnamed"),
                alphabet=d["alphabet"],
                l_min=int(d["l_min"]),
                l_max=int(d["l_max"]),
                epsilon_domains=tuple(
                    tuple(int(v) for v in dom) for dom in d["epsilon_domains"]
                ),
                canvas_h=int(d["canvas_h"]),
                canvas_w=int(d["canvas_w"]),
                glyph_scale=int(d.get("glyph_scale", 1)),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                elastic=ElasticConfig(
                    alpha=float(el.get("alpha", 0.0)),
                    sigma_field=float(el.get("sigma_field", 3.0)),
                    enabled=bool(el.get("enabled", False)),
                ),
                rotation_step_deg=float(d.get("rotation_step_deg", 5.0)),
                margin_x=int(d.get("margin_x", 4)),
            )
        except KeyError as exc:
            raise StyleError(f"style config missing key {exc}") from exc


def save_style(style: StyleSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(style.to_json_dict(), fh, indent=2)
        fh.write("\n")


def load_style(path) -> StyleSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return StyleSpec.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class Latent:
    """Structured latent: letter count, render parameters, letter identities."""

    l: int
    epsilons: tuple[int, ...]
    letters: tuple[int, ...]

    def validate(self, style: StyleSpec) -> None:
        if not (style.l_min <= self.l <= style.l_max):
            raise DomainError(f"L={self.l} outside [{style.l_min}, {style.l_max}]")
        if len(self.epsilons) != style.k:
            raise DomainError(
                f"expected {style.k} epsilon values, got {len(self.epsilons)}"
            )
        for k, (val, dom) in enumerate(zip(self.epsilons, style.epsilon_domains)):
            if val not in dom:
                raise DomainError(f"epsilon_{k + 1}={val} outside domain {dom}")
        if len(self.letters) != self.l:
            raise DomainError(f"{len(self.letters)} letters for L={self.l}")
        n = len(style.alphabet)
        if any(not (0 <= i < n) for i in self.letters):
            raise DomainError("letter index outside alphabet")

    def string(self, style: StyleSpec) -> str:
        return "".join(style.alphabet[i] for i in self.letters)


# ---------------------------------------------------------------------------
# Prior


def sample_prior(style: StyleSpec, rng: np.random.Generator) -> Latent:
    """Uniform independent draws: L, then each epsilon, then L letters."""
    l = int(rng.integers(style.l_min, style.l_max + 1))
    eps = tuple(int(dom[rng.integers(len(dom))]) for dom in style.epsilon_domains)
    letters = tuple(int(v) for v in rng.integers(0, len(style.alphabet), size=l))
    return Latent(l, eps, letters)


def log_prior(latent: Latent, style: StyleSpec) -> float:
    latent.validate(style)
    lp = -math.log(style.l_domain_size)
    for dom in style.epsilon_domains:
        lp -= math.log(len(dom))
    lp -= latent.l * math.log(len(style.alphabet))
    return lp


def enumerate_latents(style: StyleSpec, limit: int = 200_000):
    """All latents of a small style, in deterministic order."""
    count = 0
    eps_space = list(product(*[list(d) for d in style.epsilon_domains])) or [()]
    for l in range(style.l_min, style.l_max + 1):
        for eps in eps_space:
            for letters in product(range(len(style.alphabet)), repeat=l):
                count += 1
                if count > limit:
                    raise StyleError(f"latent space larger than limit {limit}")
                yield Latent(l, tuple(eps), tuple(letters))


# ---------------------------------------------------------------------------
# Rendering


def _composite(latent: Latent, style: StyleSpec) -> np.ndarray:
    kern = latent.epsilons[0] if style.k >= 1 else 0
    cw, ch = style.cell_w, style.cell_h
    width_needed = style.margin_x + latent.l * cw + (latent.l - 1) * kern
    if width_needed > style.canvas_w or kern <= -cw:
        raise RenderError(
            f"string of {latent.l} glyphs with kerning {kern} overflows "
            f"{style.canvas_w}px canvas"
        )
    canvas = np.zeros((style.canvas_h, style.canvas_w), dtype=np.float64)
    y0 = (style.canvas_h - ch) // 2
    x = style.margin_x
    for idx in latent.letters:
        bmp = glyph_bitmap(style.alphabet[idx], style.glyph_scale)
        region = canvas[y0 : y0 + ch, x : x + cw]
        np.maximum(region, bmp, out=region)
        x += cw + kern
    return canvas


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coordinates; out-of-bounds reads background 0."""
    h, w = image.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0

    def fetch(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out = np.zeros(yy.shape, dtype=np.float64)
        out[valid] = image[yy[valid], xx[valid]]
        return out

    v00 = fetch(y0, x0)
    v01 = fetch(y0, x0 + 1)
    v10 = fetch(y0 + 1, x0)
    v11 = fetch(y0 + 1, x0 + 1)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return image
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate output coordinates by -theta to find the source
    src_y = cy + sin_t * dx + cos_t * dy
    src_x = cx + cos_t * dx - sin_t * dy
    return _bilinear_sample(image, src_y, src_x)


def draw_displacement_field(
    shape: tuple[int, int], alpha: float, sigma_field: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed random field (dy, dx), normalized to max magnitude alpha."""
    if sigma_field <= 0:
        raise StyleError("sigma_field must be > 0")
    dy = rng.uniform(-1.0, 1.0, size=shape)
    dx = rng.uniform(-1.0, 1.0, size=shape)
    dy = gaussian_filter(dy, sigma=sigma_field, mode="reflect", truncate=3.0)
    dx = gaussian_filter(dx, sigma=sigma_field, mode="reflect", truncate=3.0)
    mag = np.hypot(dy, dx)
    peak = mag.max()
    if peak > 0:
        scale = alpha / peak
        dy *= scale
        dx *= scale
    return dy, dx


def elastic_deform(
    image: np.ndarray, alpha: float, sigma_field: float, rng: np.random.Generator
) -> np.ndarray:
    """Warp by a smoothed random displacement field of peak magnitude alpha."""
    if alpha < 0:
        raise StyleError("alpha must be >= 0")
    if alpha == 0.0:
        return image.copy()
    h, w = image.shape
    dy, dx = draw_displacement_field((h, w), alpha, sigma_field, rng)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return _bilinear_sample(image, yy + dy, xx + dx)


def perturb_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive per-pixel Gaussian noise with std sigma/255, clamped to [0, 1]."""
    if sigma < 0:
        raise StyleError("sigma must be >= 0")
    if sigma == 0.0:
        return image.copy()
    noisy = image + rng.normal(0.0, sigma / 255.0, size=image.shape)
    return np.clip(noisy, 0.0, 1.0)


def render_mean(latent: Latent, style: StyleSpec) -> np.ndarray:
    """Deterministic render: compositing and rotation only, no noise or warp."""
    base = _composite(latent, style)
    if style.k >= 2:
        base = _rotate(base, latent.epsilons[1] * style.rotation_step_deg)
    return np.clip(base, 0.0, 1.0)


def render(latent: Latent, style: StyleSpec, rng: np.random.Generator) -> np.ndarray:
    """Stochastic render: mean render, then elastic warp and noise from rng."""
    image = render_mean(latent, style)
    if style.elastic.enabled and style.elastic.alpha > 0:
        image = elastic_deform(image, style.elastic.alpha, style.elastic.sigma_field, rng)
    if style.noise_sigma > 0:
        image = perturb_noise(image, style.noise_sigma, rng)
    return np.clip(image, 0.0, 1.0)


def perturb_kerning(latent: Latent, delta: int, style: StyleSpec) -> Latent:
    """Shift the kerning epsilon by delta pixels, ignoring the prior's domain.

    The result may leave the training prior (that is the point of the
    perturbation) but must still fit the physical canvas.
    """
    if style.k < 1:
        raise DomainError("style has no kerning parameter")
    kern = latent.epsilons[0] + delta
    width_needed = style.margin_x + latent.l * style.cell_w + (latent.l - 1) * kern
    if width_needed > style.canvas_w or kern <= -style.cell_w:
        raise DomainError(
            f"kerning {kern} overflows the {style.canvas_w}px canvas for L={latent.l}"
        )
    return replace(latent, epsilons=(kern,) + latent.epsilons[1:])


# ---------------------------------------------------------------------------
# PGM I/O (binary P5, maxval 255)


def write_pgm(image: np.ndarray, path) -> None:
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after header
    raster = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    return raster.reshape(h, w).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Built-in styles


def default_style(robust: bool = False) -> StyleSpec:
    """The 40x120 digits style used by the training pipeline.

    ``robust=True`` turns on elastic-field broadening during generation and
    is otherwise identical.
    """
    return StyleSpec(
        style_id="default-robust" if robust else "default",
        alphabet="0123456789",
        l_min=3,
        l_max=5,
        epsilon_domains=((0, 1, 2), (-2, -1, 0, 1, 2)),
        canvas_h=40,
        canvas_w=120,
        glyph_scale=2,
        noise_sigma=0.0,
        elastic=ElasticConfig(alpha=2.5, sigma_field=3.0, enabled=robust),
        rotation_step_deg=5.0,
        margin_x=4,
    )


def tiny_style() -> StyleSpec:
    """Fully enumerable style (12 latents) for oracle comparisons."""
    return StyleSpec(
        style_id="tiny",
        alphabet="01",
        l_min=1,
        l_max=2,
        epsilon_domains=((0, 1),),
        canvas_h=16,
        canvas_w=24,
        glyph_scale=1,
        margin_x=2,
    )


def confusable_style() -> StyleSpec:
    """Two glyphs differing by three pixels; used for posterior ambiguity."""
    return StyleSpec(
        style_id="confusable",
        alphabet="OQ",
        l_min=1,
        l_max=1,
        epsilon_domains=((0,),),
        canvas_h=16,
        canvas_w=16,
        glyph_scale=1,
        margin_x=4,
    )


BUILTIN_STYLES = {
    "default": lambda: default_style(robust=False),
    "default-robust": lambda: default_style(robust=True),
    "tiny": tiny_style,
    "confusable": confusable_style,
}


def resolve_style(name_or_path: str) -> StyleSpec:
    """Accept a built-in style name or a JSON config path."""
    if name_or_path in BUILTIN_STYLES:
        return BUILTIN_STYLES[name_or_path]()
    return load_style(name_or_path)
