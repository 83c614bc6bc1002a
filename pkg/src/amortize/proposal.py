"""Image-to-latent sequence regressor and its training loop.

A CNN embeds the image; a recurrent stack consumes, at every step, the
embedding, a one-hot of the previous latent component, and a one-hot label
of the head being addressed. Per-component softmax heads emit categorical
distributions following the fixed schedule: step 1 the letter count, then
the K render parameters in index order, then one letter per position, for
T = 1 + K + L steps in total.

The same network scored teacher-forced is the factorized proposal q(x|y)
used by the inference engine.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigurationError, Tensor, TrainingError
from .captcha import Latent, StyleSpec, render, sample_prior

CHECKPOINT_MAGIC = b"AMTZCKPT"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ["step", "loss", "heldout_rr", "wall_ms"]


@dataclass(frozen=True)
class ArchConfig:
    """Network sizes; head dimensions must match the style's domains."""

    stages: tuple[str, ...]  # "pool" or "conv:<filters>", applied in order
    fc_widths: tuple[int, ...]
    lstm_width: int
    lstm_layers: int
    l_dim: int
    eps_dims: tuple[int, ...]
    alphabet_dim: int
    canvas_h: int
    canvas_w: int

    def __post_init__(self):
        for s in self.stages:
            if s != "pool" and not (s.startswith("conv:") and s[5:].isdigit()):
                raise ConfigurationError(f"bad stage token {s!r}")
        if not self.fc_widths or self.lstm_width < 1 or self.lstm_layers < 1:
            raise ConfigurationError("need at least one fc layer and lstm units")
        if min((self.l_dim, self.alphabet_dim) + self.eps_dims) < 1:
            raise ConfigurationError("head dimensions must be positive")
        h, w, c = self.canvas_h, self.canvas_w, 1
        for s in self.stages:
            if s == "pool":
                h, w = h // 2, w // 2
                if h < 1 or w < 1:
                    raise ConfigurationError("pooling collapsed the canvas")
            else:
                c = int(s[5:])

    @property
    def head_dims(self) -> tuple[int, ...]:
        return (self.l_dim,) + self.eps_dims + (self.alphabet_dim,)

    @property
    def head_names(self) -> tuple[str, ...]:
        return ("l",) + tuple(f"eps{k + 1}" for k in range(len(self.eps_dims))) + ("letter",)

    @property
    def d_kinds(self) -> int:
        return len(self.head_dims)

    @property
    def max_head_dim(self) -> int:
        return max(self.head_dims)

    @property
    def emb_dim(self) -> int:
        return self.fc_widths[-1]

    @property
    def flat_dim(self) -> int:
        h, w, c = self.canvas_h, self.canvas_w, 1
        for s in self.stages:
            if s == "pool":
                h, w = h // 2, w // 2
            else:
                c = int(s[5:])
        return c * h * w

    def matches_style(self, style: StyleSpec) -> bool:
        return (
            self.l_dim == style.l_domain_size
            and self.eps_dims == tuple(len(d) for d in style.epsilon_domains)
            and self.alphabet_dim == len(style.alphabet)
            and self.canvas_h == style.canvas_h
            and self.canvas_w == style.canvas_w
        )

    def to_json_dict(self) -> dict:
        return {
            "stages": list(self.stages),
            "fc_widths": list(self.fc_widths),
            "lstm_width": self.lstm_width,
            "lstm_layers": self.lstm_layers,
            "l_dim": self.l_dim,
            "eps_dims": list(self.eps_dims),
            "alphabet_dim": self.alphabet_dim,
            "canvas_h": self.canvas_h,
            "canvas_w": self.canvas_w,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            stages=tuple(d["stages"]),
            fc_widths=tuple(int(v) for v in d["fc_widths"]),
            lstm_width=int(d["lstm_width"]),
            lstm_layers=int(d["lstm_layers"]),
            l_dim=int(d["l_dim"]),
            eps_dims=tuple(int(v) for v in d["eps_dims"]),
            alphabet_dim=int(d["alphabet_dim"]),
            canvas_h=int(d["canvas_h"]),
            canvas_w=int(d["canvas_w"]),
        )


def desk_arch(style: StyleSpec) -> ArchConfig:
    """Small CPU-friendly preset; trains the default style in minutes.

    The input is downsampled by the leading pool so the three convolutions
    run at quarter resolution, which keeps a 20k-step run inside the
    training-time budget on a 2-core machine.
    """
    return ArchConfig(
        stages=("pool", "conv:8", "pool", "conv:16", "pool", "conv:16"),
        fc_widths=(128,),
        lstm_width=64,
        lstm_layers=1,
        l_dim=style.l_domain_size,
        eps_dims=tuple(len(d) for d in style.epsilon_domains),
        alphabet_dim=len(style.alphabet),
        canvas_h=style.canvas_h,
        canvas_w=style.canvas_w,
    )


def paper_arch(style: StyleSpec) -> ArchConfig:
    """Full-scale preset: six convolutions (64..128), pooling after the
    second, fifth and sixth, two 1024-wide fc layers, two 512-unit LSTMs."""
    return ArchConfig(
        stages=(
            "conv:64",
            "conv:64",
            "pool",
            "conv:64",
            "conv:128",
            "conv:128",
            "pool",
            "conv:128",
            "pool",
        ),
        fc_widths=(1024, 1024),
        lstm_width=512,
        lstm_layers=2,
        l_dim=style.l_domain_size,
        eps_dims=tuple(len(d) for d in style.epsilon_domains),
        alphabet_dim=len(style.alphabet),
        canvas_h=style.canvas_h,
        canvas_w=style.canvas_w,
    )


ARCH_PRESETS = {"desk": desk_arch, "paper": paper_arch}


@dataclass
class StepInput:
    """One recurrence step's input pieces."""

    embedding: np.ndarray  # (N, emb_dim)
    prev_onehot: np.ndarray  # (N, max_head_dim); zeros at the start token
    label_onehot: np.ndarray  # (N, d_kinds), one-hot of the addressed head

    def validate(self, arch: ArchConfig):
        n = self.embedding.shape[0]
        if self.prev_onehot.shape != (n, arch.max_head_dim):
            raise ConfigurationError("prev_onehot has wrong width")
        if self.label_onehot.shape != (n, arch.d_kinds):
            raise ConfigurationError("label_onehot has wrong width")
        rowsum = self.label_onehot.sum(axis=1)
        if not np.all(rowsum == 1):
            raise ConfigurationError("label vector must be one-hot")


class ProposalNet:
    """Trainable regressor from images to per-component categorical heads."""

    def __init__(self, arch: ArchConfig, style: StyleSpec, rng: np.random.Generator):
        if not arch.matches_style(style):
            raise ConfigurationError("arch head dimensions do not match the style")
        self.arch = arch
        self.style = style
        self.params: dict[str, Tensor] = {}
        self._build(rng)
        self._eps_index = [
            {v: i for i, v in enumerate(dom)} for dom in style.epsilon_domains
        ]

    # -- construction -------------------------------------------------

    def _add(self, name, shape, rng=None, fan_in=None):
        if rng is None:
            t = ad.parameter(np.zeros(shape), name=name)
        else:
            t = ad.parameter(shape, rng=rng, fan_in=fan_in, name=name)
        self.params[name] = t
        return t

    def _build(self, rng):
        arch = self.arch
        in_ch = 1
        conv_idx = 0
        for s in arch.stages:
            if s == "pool":
                continue
            f = int(s[5:])
            self._add(f"conv{conv_idx}.kernels", (f, in_ch, 3, 3), rng, fan_in=in_ch * 9)
            self._add(f"conv{conv_idx}.bias", (f,))
            in_ch = f
            conv_idx += 1
        width = arch.flat_dim
        for i, fc in enumerate(arch.fc_widths):
            self._add(f"fc{i}.weight", (fc, width), rng, fan_in=width)
            self._add(f"fc{i}.bias", (fc,))
            width = fc
        step_in = arch.emb_dim + arch.max_head_dim + arch.d_kinds
        self.lstm_stack = []
        for i in range(arch.lstm_layers):
            wx = self._add(f"lstm{i}.wx", (4 * arch.lstm_width, step_in), rng, fan_in=step_in)
            wh = self._add(f"lstm{i}.wh", (4 * arch.lstm_width, arch.lstm_width), rng, fan_in=arch.lstm_width)
            b = self._add(f"lstm{i}.bias", (4 * arch.lstm_width,))
            self.lstm_stack.append(ad.LSTMParams(wx, wh, b))
            step_in = arch.lstm_width
        for name, dim in zip(arch.head_names, arch.head_dims):
            self._add(f"head_{name}.weight", (dim, arch.lstm_width), rng, fan_in=arch.lstm_width)
            self._add(f"head_{name}.bias", (dim,))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    # -- schedule helpers ----------------------------------------------

    def head_kind_at(self, t: int) -> int:
        """Head index addressed at step t (0-based); letters from K+1 on."""
        k = len(self.arch.eps_dims)
        return t if t <= k else k + 1

    def total_steps(self, l: int) -> int:
        return 1 + len(self.arch.eps_dims) + l

    def _targets_at(self, t: int, latents: list[Latent]) -> tuple[np.ndarray, np.ndarray]:
        """(target index, active mask) arrays for teacher forcing at step t."""
        style = self.style
        k = style.k
        n = len(latents)
        idx = np.zeros(n, dtype=np.intp)
        mask = np.ones(n, dtype=np.float64)
        if t == 0:
            for i, lat in enumerate(latents):
                idx[i] = lat.l - style.l_min
        elif t <= k:
            table = self._eps_index[t - 1]
            for i, lat in enumerate(latents):
                idx[i] = table[lat.epsilons[t - 1]]
        else:
            j = t - k - 1
            for i, lat in enumerate(latents):
                if j < lat.l:
                    idx[i] = lat.letters[j]
                else:
                    mask[i] = 0.0
        return idx, mask

    def _onehot_prev(self, kind: int, idx: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = np.zeros((idx.shape[0], self.arch.max_head_dim))
        active = mask > 0
        out[np.nonzero(active)[0], idx[active]] = 1.0
        return out

    def _label(self, kind: int, n: int) -> np.ndarray:
        out = np.zeros((n, self.arch.d_kinds))
        out[:, kind] = 1.0
        return out

    # -- forward pieces -------------------------------------------------

    def embed(self, images: np.ndarray) -> Tensor:
        """CNN embedding; accepts (H, W) or a batch (N, H, W)."""
        single = images.ndim == 2
        batch = images[None] if single else images
        n, h, w = batch.shape
        if (h, w) != (self.arch.canvas_h, self.arch.canvas_w):
            raise ConfigurationError(
                f"image {h}x{w} does not match arch canvas "
                f"{self.arch.canvas_h}x{self.arch.canvas_w}"
            )
        x = Tensor(batch.reshape(n, 1, h, w))
        conv_idx = 0
        for s in self.arch.stages:
            if s == "pool":
                x = ad.maxpool2d(x)
            else:
                x = ad.relu(
                    ad.conv2d(
                        x,
                        self.params[f"conv{conv_idx}.kernels"],
                        self.params[f"conv{conv_idx}.bias"],
                    )
                )
                conv_idx += 1
        x = ad.reshape(x, (n, self.arch.flat_dim))
        for i in range(len(self.arch.fc_widths)):
            x = ad.relu(
                ad.linear(x, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"])
            )
        return x

    def initial_state(self, n: int):
        zeros = lambda: Tensor(np.zeros((n, self.arch.lstm_width)))
        return [(zeros(), zeros()) for _ in range(self.arch.lstm_layers)]

    def _recur(self, inp: Tensor, state):
        new_state = []
        x = inp
        for layer, (h, c) in zip(self.lstm_stack, state):
            h, c = ad.lstm_cell(x, h, c, layer)
            new_state.append((h, c))
            x = h
        return x, new_state

    def _head_logits(self, kind: int, h: Tensor) -> Tensor:
        name = self.arch.head_names[kind]
        return ad.linear(h, self.params[f"head_{name}.weight"], self.params[f"head_{name}.bias"])

    def step(self, state, step_input: StepInput):
        """One public recurrence step: returns (probabilities, new state)."""
        step_input.validate(self.arch)
        kinds = np.nonzero(step_input.label_onehot[0])[0]
        kind = int(kinds[0])
        if not np.all(step_input.label_onehot[:, kind] == 1):
            raise ad.UsageError("all rows of a step must address the same head")
        inp = Tensor(
            np.concatenate(
                [step_input.embedding, step_input.prev_onehot, step_input.label_onehot],
                axis=1,
            )
        )
        out, new_state = self._recur(inp, state)
        probs = ad.softmax(self._head_logits(kind, out))
        return probs, new_state

    # -- training loss ----------------------------------------------------

    def loss(self, latents: list[Latent], images: np.ndarray) -> Tensor:
        """Mean over the batch of the summed per-step negative log softmax
        picked at the true component (teacher forcing)."""
        n = len(latents)
        if n == 0 or images.shape[0] != n:
            raise ConfigurationError("batch latents and images differ in length")
        emb = self.embed(images)
        state = self.initial_state(n)
        k = self.style.k
        t_max = 1 + k + max(lat.l for lat in latents)
        prev = np.zeros((n, self.arch.max_head_dim))
        total = Tensor(0.0)
        for t in range(t_max):
            kind = self.head_kind_at(t)
            inp = ad.concat([emb, Tensor(prev), Tensor(self._label(kind, n))], axis=-1)
            out, state = self._recur(inp, state)
            logp = ad.log_softmax(self._head_logits(kind, out))
            idx, mask = self._targets_at(t, latents)
            picked = ad.take_along_last(logp, idx)
            if mask.min() < 1.0:
                picked = ad.mul(picked, Tensor(mask))
            total = ad.add(total, ad.tsum(picked))
            prev = self._onehot_prev(kind, idx, mask)
        return ad.mul(total, Tensor(-1.0 / n))

    def score(self, image: np.ndarray, latents: list[Latent]) -> np.ndarray:
        """log q(x|y) for each latent against one image (teacher forced)."""
        with ad.no_grad():
            n = len(latents)
            emb_t = self.embed(image)
            emb = np.repeat(emb_t.data, n, axis=0)
            state = self.initial_state(n)
            k = self.style.k
            t_max = 1 + k + max(lat.l for lat in latents)
            prev = np.zeros((n, self.arch.max_head_dim))
            logq = np.zeros(n)
            for t in range(t_max):
                kind = self.head_kind_at(t)
                inp = ad.concat([Tensor(emb), Tensor(prev), Tensor(self._label(kind, n))], axis=-1)
                out, state = self._recur(inp, state)
                logp = ad.log_softmax(self._head_logits(kind, out)).data
                idx, mask = self._targets_at(t, latents)
                logq += logp[np.arange(n), idx] * mask
                prev = self._onehot_prev(kind, idx, mask)
            return logq

    # -- decoding and sampling ---------------------------------------------

    def decode_batch(self, images: np.ndarray) -> list[Latent]:
        """Greedy argmax decode; predicted values are fed forward."""
        with ad.no_grad():
            n = images.shape[0]
            emb = self.embed(images).data
            state = self.initial_state(n)
            style = self.style
            k = style.k
            prev = np.zeros((n, self.arch.max_head_dim))
            l_hat = np.zeros(n, dtype=np.intp)
            eps_hat = np.zeros((n, k), dtype=np.intp)
            letters: list[list[int]] = [[] for _ in range(n)]
            t = 0
            while True:
                kind = self.head_kind_at(t)
                if t > k and (t - k - 1) >= l_hat.max():
                    break
                inp = Tensor(np.concatenate([emb, prev, self._label(kind, n)], axis=1))
                out, state = self._recur(inp, state)
                logits = self._head_logits(kind, out).data
                idx = logits.argmax(axis=1)
                mask = np.ones(n)
                if t == 0:
                    l_hat = idx + style.l_min
                elif t <= k:
                    eps_hat[:, t - 1] = idx
                else:
                    j = t - k - 1
                    mask = (j < l_hat).astype(np.float64)
                    for i in range(n):
                        if j < l_hat[i]:
                            letters[i].append(int(idx[i]))
                prev = self._onehot_prev(kind, idx, mask)
                t += 1
            return [
                Latent(
                    int(l_hat[i]),
                    tuple(
                        style.epsilon_domains[kk][eps_hat[i, kk]] for kk in range(k)
                    ),
                    tuple(letters[i]),
                )
                for i in range(n)
            ]

    def sample_batch(
        self, image: np.ndarray, m: int, rng: np.random.Generator
    ) -> tuple[list[Latent], np.ndarray]:
        """m ancestral draws from q(.|y) plus their exact log densities."""
        with ad.no_grad():
            emb = np.repeat(self.embed(image).data, m, axis=0)
            state = self.initial_state(m)
            style = self.style
            k = style.k
            prev = np.zeros((m, self.arch.max_head_dim))
            logq = np.zeros(m)
            l_hat = np.zeros(m, dtype=np.intp)
            eps_hat = np.zeros((m, k), dtype=np.intp)
            letters: list[list[int]] = [[] for _ in range(m)]
            t = 0
            while True:
                kind = self.head_kind_at(t)
                if t > k and (t - k - 1) >= l_hat.max():
                    break
                inp = Tensor(np.concatenate([emb, prev, self._label(kind, m)], axis=1))
                out, state = self._recur(inp, state)
                logp = ad.log_softmax(self._head_logits(kind, out)).data
                probs = np.exp(logp)
                u = rng.random(m)
                idx = np.minimum(
                    (probs.cumsum(axis=1) < u[:, None]).sum(axis=1), probs.shape[1] - 1
                ).astype(np.intp)
                mask = np.ones(m)
                if t == 0:
                    l_hat = idx + style.l_min
                elif t <= k:
                    eps_hat[:, t - 1] = idx
                else:
                    j = t - k - 1
                    mask = (j < l_hat).astype(np.float64)
                    for i in np.nonzero(mask)[0]:
                        letters[i].append(int(idx[i]))
                logq += logp[np.arange(m), idx] * mask
                prev = self._onehot_prev(kind, idx, mask)
                t += 1
            latents = [
                Latent(
                    int(l_hat[i]),
                    tuple(style.epsilon_domains[kk][eps_hat[i, kk]] for kk in range(k)),
                    tuple(letters[i]),
                )
                for i in range(m)
            ]
            return latents, logq


def loss(net: ProposalNet, latents: list[Latent], images: np.ndarray) -> Tensor:
    return net.loss(latents, images)


def embed(net: ProposalNet, image: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return net.embed(image).data[0]


def decode_map(net: ProposalNet, image: np.ndarray) -> Latent:
    """Greedy decode of a single image."""
    return net.decode_batch(image[None])[0]


def sample_proposal(
    net: ProposalNet, image: np.ndarray, rng: np.random.Generator
) -> tuple[Latent, float]:
    latents, logq = net.sample_batch(image, 1, rng)
    return latents[0], float(logq[0])


def recognition_rate(net: ProposalNet, latents: list[Latent], images: np.ndarray) -> float:
    """Fraction of exact letter-sequence matches (including the count L)."""
    decoded = net.decode_batch(images)
    hits = sum(
        1
        for d, t in zip(decoded, latents)
        if d.l == t.l and d.letters == t.letters
    )
    return hits / max(len(latents), 1)


# ---------------------------------------------------------------------------
# Training


def _fresh_batch(style, batch_size, rng):
    latents = [sample_prior(style, rng) for _ in range(batch_size)]
    images = np.stack([render(lat, style, rng) for lat in latents])
    return latents, images


def train(
    net: ProposalNet,
    style: StyleSpec,
    steps: int,
    batch_size: int = 128,
    *,
    seed: int = 0,
    alpha: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_num: float = 1e-8,
    eval_every: int = 1000,
    eval_size: int = 200,
    metrics_path=None,
    dataset: list[tuple[Latent, np.ndarray]] | None = None,
    progress: bool = False,
) -> list[dict]:
    """Optimize the net on freshly generated data (or a finite dataset when
    ``dataset`` is given, for ablations). Returns the metrics rows.

    Seed streams: spawn key (1,) drives batch generation, (2,) the held-out
    evaluation set, so runs are reproducible end to end.
    """
    data_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))
    held_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))
    held_latents, held_images = _fresh_batch(style, eval_size, held_rng) if eval_size else ([], None)
    opt = ad.Adam(net.parameters(), alpha=alpha, beta1=beta1, beta2=beta2, eps=eps_num)
    rows: list[dict] = []
    cursor = 0
    try:
        for step_i in range(1, steps + 1):
            t0 = time.perf_counter()
            if dataset is None:
                latents, images = _fresh_batch(style, batch_size, data_rng)
            else:
                picks = [dataset[(cursor + j) % len(dataset)] for j in range(batch_size)]
                cursor = (cursor + batch_size) % len(dataset)
                latents = [p[0] for p in picks]
                images = np.stack([p[1] for p in picks])
            loss_t = net.loss(latents, images)
            value = loss_t.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step_i}")
            opt.zero_grad()
            loss_t.backward()
            opt.step()
            rr = None
            if eval_size and (step_i % eval_every == 0 or step_i == steps):
                rr = recognition_rate(net, held_latents, held_images)
            rows.append(
                {
                    "step": step_i,
                    "loss": value,
                    "heldout_rr": rr,
                    "wall_ms": (time.perf_counter() - t0) * 1000.0,
                }
            )
            if progress and (step_i % eval_every == 0 or step_i == 1):
                tag = f" rr={rr:.3f}" if rr is not None else ""
                print(f"step {step_i}/{steps} loss={value:.4f}{tag}", flush=True)
    finally:
        if metrics_path is not None:
            write_metrics(rows, metrics_path)
    return rows


def write_metrics(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            rr = "" if r["heldout_rr"] is None else f"{r['heldout_rr']:.6f}"
            writer.writerow([r["step"], f"{r['loss']:.10g}", rr, f"{r['wall_ms']:.3f}"])


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(net: ProposalNet, path) -> None:
    header = json.dumps(
        {"arch": net.arch.to_json_dict(), "style": net.style.to_json_dict()}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(net.params)))
        for name, tensor in net.params.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path) -> ProposalNet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arch = ArchConfig.from_json_dict(header["arch"])
        style = StyleSpec.from_json_dict(header["style"])
        net = ProposalNet(arch, style, np.random.default_rng(0))
        (nparams,) = struct.unpack("<I", fh.read(4))
        for _ in range(nparams):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            if name not in net.params:
                raise ConfigurationError(f"checkpoint has unknown parameter {name!r}")
            if net.params[name].data.shape != tuple(dims):
                raise ConfigurationError(f"parameter {name!r} has shape {dims}")
            net.params[name].data = values.astype(np.float64).copy()
    return net
