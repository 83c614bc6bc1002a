"""Command-line pipeline: generate, train, break, perturb-eval, gauss-lab.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
All commands are reproducible from --seed; per-record randomness is derived
via SeedSequence(seed, spawn_key=(index,)).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import gausslab as gl
from . import inference as inf
from . import proposal as pp
from .autodiff import ConfigurationError, TrainingError, UsageError
from .captcha import (
    DomainError,
    Latent,
    RenderError,
    StyleError,
    StyleSpec,
    elastic_deform,
    perturb_kerning,
    perturb_noise,
    read_pgm,
    render,
    render_mean,
    resolve_style,
    sample_prior,
    write_pgm,
)

MANIFEST_VERSION = "1.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _record_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _record_rng(record_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(record_seed))


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    style = resolve_style(args.style)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as mf:
        header = {
            "manifest_version": MANIFEST_VERSION,
            "style": style.to_json_dict(),
            "count": args.count,
            "seed": args.seed,
        }
        mf.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(args.count):
            rec_seed = _record_seed(args.seed, i)
            rng = _record_rng(rec_seed)
            latent = sample_prior(style, rng)
            image = render(latent, style, rng)
            name = f"img_{i:06d}.pgm"
            write_pgm(image, out_dir / name)
            record = {
                "image": name,
                "l": latent.l,
                "epsilons": list(latent.epsilons),
                "letters": list(latent.letters),
                "string": latent.string(style),
                "seed": rec_seed,
            }
            mf.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {args.count} images and {manifest_path}")
    return EXIT_OK


def load_manifest(path) -> tuple[StyleSpec, list[dict]]:
    """Header-checked manifest load; rejects unknown major versions."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError("empty manifest")
    header = json.loads(lines[0])
    version = str(header.get("manifest_version", ""))
    major = version.split(".", 1)[0]
    if major != MANIFEST_VERSION.split(".", 1)[0]:
        raise ConfigurationError(
            f"unsupported manifest version {version!r} (expected major "
            f"{MANIFEST_VERSION.split('.', 1)[0]})"
        )
    style = StyleSpec.from_json_dict(header["style"])
    return style, [json.loads(ln) for ln in lines[1:]]


def load_dataset(manifest_path) -> tuple[StyleSpec, list[tuple[Latent, np.ndarray]]]:
    style, records = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    pairs = []
    for rec in records:
        latent = Latent(rec["l"], tuple(rec["epsilons"]), tuple(rec["letters"]))
        latent.validate(style)
        image = read_pgm(base / rec["image"])
        if image.shape != (style.canvas_h, style.canvas_w):
            raise ConfigurationError(f"{rec['image']} does not match canvas dims")
        pairs.append((latent, image))
    return style, pairs


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    style = resolve_style(args.style)
    if args.arch not in pp.ARCH_PRESETS:
        raise ConfigurationError(f"unknown arch preset {args.arch!r}")
    arch = pp.ARCH_PRESETS[args.arch](style)
    init_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(args.seed, spawn_key=(0,)))
    )
    net = pp.ProposalNet(arch, style, init_rng)
    dataset = None
    if args.dataset:
        ds_style, dataset = load_dataset(args.dataset)
        if ds_style.to_json_dict() != style.to_json_dict():
            raise ConfigurationError("--dataset style differs from --style")
    metrics_path = args.metrics or (str(args.checkpoint) + ".metrics.csv")
    try:
        pp.train(
            net,
            style,
            steps=args.steps,
            batch_size=args.batch,
            seed=args.seed,
            alpha=args.alpha_lr,
            eval_every=args.eval_every,
            eval_size=args.eval_size,
            metrics_path=metrics_path,
            dataset=dataset,
            progress=not args.quiet,
        )
    except TrainingError:
        pp.save_checkpoint(net, args.checkpoint)  # retain partial state
        raise
    pp.save_checkpoint(net, args.checkpoint)
    print(f"wrote {args.checkpoint} and {metrics_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# break


def _load_images_for_break(args, style: StyleSpec):
    if bool(args.image) == bool(args.dataset):
        raise ConfigurationError("give exactly one of --image or --dataset")
    if args.image:
        img = read_pgm(args.image)
        if img.shape != (style.canvas_h, style.canvas_w):
            raise ConfigurationError(
                f"image {img.shape} does not match checkpoint canvas "
                f"{(style.canvas_h, style.canvas_w)}"
            )
        return [(Path(args.image).name, img, None)]
    ds_style, pairs = load_dataset(args.dataset)
    if (ds_style.canvas_h, ds_style.canvas_w) != (style.canvas_h, style.canvas_w):
        raise ConfigurationError("dataset canvas does not match checkpoint")
    return [(f"#{i}", img, lat) for i, (lat, img) in enumerate(pairs)]


def cmd_break(args) -> int:
    net = pp.load_checkpoint(args.checkpoint)
    style = net.style
    entries = _load_images_for_break(args, style)
    if args.mode == "greedy":
        hits = 0
        labeled = 0
        for name, img, truth in entries:
            t0 = time.perf_counter()
            decoded = pp.decode_map(net, img)
            ms = (time.perf_counter() - t0) * 1000.0
            text = decoded.string(style)
            suffix = ""
            if truth is not None:
                labeled += 1
                ok = decoded.l == truth.l and decoded.letters == truth.letters
                hits += ok
                suffix = f" truth={truth.string(style)} {'OK' if ok else 'MISS'}"
            print(f"{name}\t{text}\t{ms:.1f} ms{suffix}")
        if labeled:
            print(f"recognition rate: {hits / labeled:.4f} over {labeled}")
        return EXIT_OK
    # posterior mode
    cfg = inf.AbcConfig(args.eps_abc) if args.eps_abc else inf.AbcConfig.for_style(style)
    rng = _record_rng(_record_seed(args.seed, 0))
    lines = ["rank,string,probability"]
    summary = []
    for name, img, _ in entries:
        t0 = time.perf_counter()
        ps = inf.importance_sample(img, net, style, args.particles, cfg, rng)
        wall = time.perf_counter() - t0
        for rank, (text, prob) in enumerate(inf.string_posterior(ps, args.top_k), start=1):
            lines.append(f"{rank},{text},{prob:.6f}")
        summary.append(
            {
                "image": name,
                "particles": args.particles,
                "ess": inf.effective_sample_size(ps),
                "eps_abc": cfg.epsilon,
                "wall_s": wall,
            }
        )
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    print(json.dumps(summary if len(summary) > 1 else summary[0]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# perturb-eval


def _apply_perturbation(kind, latent, style, rng, *, sigma, delta, alpha):
    """Render one test image under the requested test-time shift."""
    if kind == "kerning":
        latent = perturb_kerning(latent, delta, style)
    image = render_mean(latent, style)
    if kind == "noise":
        image = perturb_noise(image, sigma, rng)
    elif kind == "elastic":
        image = elastic_deform(image, alpha, style.elastic.sigma_field, rng)
    return latent, image


def evaluate_perturbation(
    net: pp.ProposalNet,
    style: StyleSpec,
    kind: str,
    n: int,
    seed: int,
    *,
    sigma: float = 5.0,
    delta: int = 1,
    alpha: float = 2.5,
) -> dict:
    """EvalReport dict: recognition rate and per-image decode time stats."""
    if kind not in ("clean", "noise", "kerning", "elastic"):
        raise ConfigurationError(f"unknown perturbation {kind!r}")
    rng = _record_rng(_record_seed(seed, 0))
    latents, images = [], []
    for _ in range(n):
        lat = sample_prior(style, rng)
        lat, img = _apply_perturbation(
            kind, lat, style, rng, sigma=sigma, delta=delta, alpha=alpha
        )
        latents.append(lat)
        images.append(img)
    times = []
    hits = 0
    for lat, img in zip(latents, images):
        t0 = time.perf_counter()
        decoded = pp.decode_map(net, img)
        times.append((time.perf_counter() - t0) * 1000.0)
        if decoded.l == lat.l and decoded.letters == lat.letters:
            hits += 1
    times_arr = np.array(times)
    value = {"noise": sigma, "kerning": delta, "elastic": alpha, "clean": 0.0}[kind]
    return {
        "perturbation": kind,
        "value": value,
        "rr": hits / n,
        "n": n,
        "decode_ms_mean": float(times_arr.mean()),
        "decode_ms_p50": float(np.median(times_arr)),
        "decode_ms_max": float(times_arr.max()),
    }


def cmd_perturb_eval(args) -> int:
    net = pp.load_checkpoint(args.checkpoint)
    style = resolve_style(args.style) if args.style else net.style
    if (style.canvas_h, style.canvas_w) != (net.style.canvas_h, net.style.canvas_w):
        raise ConfigurationError("style canvas does not match checkpoint")
    kinds = [k.strip() for k in args.perturbation.split(",") if k.strip()]
    reports = [
        evaluate_perturbation(
            net,
            style,
            kind,
            args.n,
            args.seed,
            sigma=args.sigma,
            delta=args.kerning_delta,
            alpha=args.alpha,
        )
        for kind in kinds
    ]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(reports[0].keys()))
            writer.writeheader()
            writer.writerows(reports)
    for rep in reports:
        print(json.dumps(rep))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gauss-lab


def _parse_mu_list(text: str) -> list[np.ndarray]:
    out = []
    for part in text.split(";"):
        coords = [float(v) for v in part.split(",")]
        if len(coords) != 2:
            raise ConfigurationError(f"bad mu_pi entry {part!r}")
        out.append(np.array(coords))
    return out


def cmd_gauss_lab(args) -> int:
    mus = _parse_mu_list(args.mu_pi)
    worlds = [gl.paper_world(mu) for mu in mus]
    net = gl.train_gaussian_proposal(
        worlds[0], steps=args.train_steps, seed=args.seed
    )
    rows = gl.mismatch_sweep(
        worlds, net, m=args.particles, n_seeds=args.seeds, base_seed=args.seed
    )
    out_path = args.out or "gauss_lab.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "seed", "mu_err", "sigma_err", "ess"])
        for r in rows:
            writer.writerow(
                [r["scenario"], r["seed"], f"{r['mu_err']:.6f}", f"{r['sigma_err']:.6f}", f"{r['ess']:.3f}"]
            )
    print(f"wrote {out_path} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amortize",
        description="Synthetic-Captcha training and importance-sampling inference pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a labeled synthetic dataset")
    g.add_argument("--style", required=True, help="style JSON path or built-in name")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a proposal net on fresh synthetic data")
    t.add_argument("--style", required=True)
    t.add_argument("--arch", default="desk", choices=sorted(pp.ARCH_PRESETS))
    t.add_argument("--steps", type=int, default=20000)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--metrics", default=None, help="metrics CSV path")
    t.add_argument("--alpha-lr", dest="alpha_lr", type=float, default=1e-4, help="Adam learning rate")
    t.add_argument("--eval-every", type=int, default=1000)
    t.add_argument("--eval-size", type=int, default=200)
    t.add_argument("--dataset", default=None, help="finite dataset manifest (ablation)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("break", help="decode images with a trained checkpoint")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--image", default=None, help="single PGM image")
    b.add_argument("--dataset", default=None, help="manifest of labeled images")
    b.add_argument("--mode", choices=("greedy", "posterior"), default="greedy")
    b.add_argument("--particles", type=int, default=100)
    b.add_argument("--top-k", dest="top_k", type=int, default=10)
    b.add_argument("--eps-abc", dest="eps_abc", type=float, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="posterior CSV path (default stdout)")
    b.set_defaults(func=cmd_break)

    p = sub.add_parser("perturb-eval", help="recognition rate under test-time shifts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--style", default=None, help="defaults to the checkpoint style")
    p.add_argument(
        "--perturbation",
        default="clean",
        help="comma list of clean|noise|kerning|elastic",
    )
    p.add_argument("--sigma", type=float, default=5.0, help="noise sigma, 0-255 scale")
    p.add_argument("--kerning-delta", dest="kerning_delta", type=int, default=1)
    p.add_argument("--alpha", type=float, default=2.5, help="elastic peak displacement")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(func=cmd_perturb_eval)

    gaussp = sub.add_parser("gauss-lab", help="Gaussian mismatch sweep")
    gaussp.add_argument("--mu-pi", dest="mu_pi", default="0,0;5,0;8,0")
    gaussp.add_argument("--particles", type=int, default=1000)
    gaussp.add_argument("--seeds", type=int, default=10)
    gaussp.add_argument("--train-steps", dest="train_steps", type=int, default=12000)
    gaussp.add_argument("--seed", type=int, default=0)
    gaussp.add_argument("--out", default=None)
    gaussp.set_defaults(func=cmd_gauss_lab)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        ConfigurationError,
        StyleError,
        DomainError,
        RenderError,
        UsageError,
        FileNotFoundError,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
