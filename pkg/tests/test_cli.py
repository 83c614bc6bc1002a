"""Command-line pipeline: determinism, file formats, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from amortize import cli
from amortize import proposal as pp
from amortize.autodiff import TrainingError
from amortize.captcha import read_pgm, render, resolve_style, sample_prior, write_pgm


def run(argv):
    return cli.main(argv)


def read_tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def strip_wall_ms(csv_text: str) -> list[str]:
    rows = csv_text.splitlines()
    return [",".join(r.split(",")[:3]) for r in rows]


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "tiny.ckpt"
    rc = run(
        [
            "train", "--style", "tiny", "--steps", "120", "--batch", "16",
            "--seed", "3", "--checkpoint", str(path), "--alpha-lr", "3e-3",
            "--eval-every", "60", "--eval-size", "20", "--quiet",
        ]
    )
    assert rc == 0
    return path


class TestGenerate:
    def test_count_zero_empty_manifest(self, tmp_path):
        rc = run(["generate", "--style", "tiny", "--count", "0", "--out", str(tmp_path / "d"), "--seed", "1"])
        assert rc == 0
        style, records = cli.load_manifest(tmp_path / "d" / "manifest.jsonl")
        assert records == []
        assert style == resolve_style("tiny")

    def test_same_seed_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            rc = run(["generate", "--style", "tiny", "--count", "5", "--out", str(tmp_path / sub), "--seed", "9"])
            assert rc == 0
        assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")

    def test_round_trip_re_render(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "8", "--out", str(out), "--seed", "4"]) == 0
        style, records = cli.load_manifest(out / "manifest.jsonl")
        for rec in records:
            rng = cli._record_rng(rec["seed"])
            latent = sample_prior(style, rng)
            assert [latent.l, list(latent.epsilons), list(latent.letters)] == [
                rec["l"], rec["epsilons"], rec["letters"],
            ]
            image = render(latent, style, rng)
            stored = read_pgm(out / rec["image"])
            quantized = np.clip(np.rint(image * 255), 0, 255) / 255.0
            np.testing.assert_array_equal(stored, quantized)

    def test_invalid_style_exit_2(self, tmp_path):
        assert run(["generate", "--style", "/nope.json", "--count", "1", "--out", str(tmp_path), "--seed", "0"]) == 2

    def test_manifest_version_rejected(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "1", "--out", str(out), "--seed", "0"]) == 0
        manifest = out / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        header = json.loads(lines[0])
        header["manifest_version"] = "2.0"
        manifest.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(Exception, match="version"):
            cli.load_manifest(manifest)


class TestTrain:
    def test_single_step_writes_loadable_checkpoint(self, tmp_path):
        ck = tmp_path / "one.ckpt"
        rc = run(
            ["train", "--style", "tiny", "--steps", "1", "--batch", "4", "--seed", "0",
             "--checkpoint", str(ck), "--eval-size", "0", "--quiet"]
        )
        assert rc == 0
        net = pp.load_checkpoint(ck)
        assert net.style.style_id == "tiny"

    def test_metrics_one_row_per_step(self, tmp_path):
        ck = tmp_path / "m.ckpt"
        metrics = tmp_path / "m.csv"
        rc = run(
            ["train", "--style", "tiny", "--steps", "7", "--batch", "4", "--seed", "0",
             "--checkpoint", str(ck), "--metrics", str(metrics), "--eval-size", "0", "--quiet"]
        )
        assert rc == 0
        lines = metrics.read_text().splitlines()
        assert lines[0] == "step,loss,heldout_rr,wall_ms"
        assert len(lines) == 8

    def test_determinism_checkpoint_and_metrics(self, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            d = tmp_path / sub
            d.mkdir()
            rc = run(
                ["train", "--style", "tiny", "--steps", "25", "--batch", "8", "--seed", "11",
                 "--checkpoint", str(d / "net.ckpt"), "--metrics", str(d / "m.csv"),
                 "--eval-every", "10", "--eval-size", "10", "--quiet"]
            )
            assert rc == 0
            outs.append(d)
        assert (outs[0] / "net.ckpt").read_bytes() == (outs[1] / "net.ckpt").read_bytes()
        # metrics match except the wall-clock column
        assert strip_wall_ms((outs[0] / "m.csv").read_text()) == strip_wall_ms((outs[1] / "m.csv").read_text())

    def test_dataset_ablation_mode(self, tmp_path):
        ds = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "10", "--out", str(ds), "--seed", "2"]) == 0
        ck = tmp_path / "abl.ckpt"
        rc = run(
            ["train", "--style", "tiny", "--steps", "5", "--batch", "4", "--seed", "1",
             "--checkpoint", str(ck), "--dataset", str(ds / "manifest.jsonl"),
             "--eval-size", "0", "--quiet"]
        )
        assert rc == 0

    def test_numeric_failure_exit_3_retains_checkpoint(self, tmp_path, monkeypatch):
        ck = tmp_path / "partial.ckpt"

        def boom(*args, **kwargs):
            raise TrainingError("non-finite loss nan at step 1")

        monkeypatch.setattr(pp, "train", boom)
        rc = run(
            ["train", "--style", "tiny", "--steps", "1", "--batch", "4", "--seed", "0",
             "--checkpoint", str(ck), "--eval-size", "0", "--quiet"]
        )
        assert rc == 3
        assert ck.exists()
        pp.load_checkpoint(ck)


class TestBreak:
    def test_greedy_reports_strings_and_times(self, tiny_checkpoint, tmp_path, capsys):
        ds = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "6", "--out", str(ds), "--seed", "8"]) == 0
        rc = run(["break", "--checkpoint", str(tiny_checkpoint), "--dataset", str(ds / "manifest.jsonl"), "--mode", "greedy"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "recognition rate:" in out
        assert "ms" in out

    def test_posterior_mode_outputs_csv_and_summary(self, tiny_checkpoint, tmp_path, capsys):
        ds = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "1", "--out", str(ds), "--seed", "5"]) == 0
        capsys.readouterr()  # drop the generate banner
        rc = run(
            ["break", "--checkpoint", str(tiny_checkpoint), "--image", str(ds / "img_000000.pgm"),
             "--mode", "posterior", "--particles", "100", "--seed", "1"]
        )
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "rank,string,probability"
        summary = json.loads(out[-1])
        assert summary["particles"] == 100
        assert 1.0 <= summary["ess"] <= 100.0
        assert summary["eps_abc"] > 0

    def test_posterior_csv_to_file(self, tiny_checkpoint, tmp_path):
        ds = tmp_path / "ds"
        assert run(["generate", "--style", "tiny", "--count", "1", "--out", str(ds), "--seed", "6"]) == 0
        out_csv = tmp_path / "post.csv"
        rc = run(
            ["break", "--checkpoint", str(tiny_checkpoint), "--image", str(ds / "img_000000.pgm"),
             "--mode", "posterior", "--particles", "50", "--out", str(out_csv)]
        )
        assert rc == 0
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "rank,string,probability"
        probs = [float(r.split(",")[2]) for r in rows[1:]]
        assert sum(probs) <= 1.0 + 1e-9

    def test_dimension_mismatch_exit_2(self, tiny_checkpoint, tmp_path):
        wrong = tmp_path / "wrong.pgm"
        write_pgm(np.zeros((40, 120)), wrong)
        rc = run(["break", "--checkpoint", str(tiny_checkpoint), "--image", str(wrong)])
        assert rc == 2

    def test_requires_exactly_one_source(self, tiny_checkpoint):
        assert run(["break", "--checkpoint", str(tiny_checkpoint)]) == 2

    def test_checkpoint_roundtrip_preserves_decodes(self, tiny_checkpoint, tmp_path):
        net = pp.load_checkpoint(tiny_checkpoint)
        copy_path = tmp_path / "copy.ckpt"
        pp.save_checkpoint(net, copy_path)
        loaded = pp.load_checkpoint(copy_path)
        style = net.style
        rng = np.random.Generator(np.random.PCG64(123))
        latents = [sample_prior(style, rng) for _ in range(100)]
        images = np.stack([render(lat, style, rng) for lat in latents])
        assert net.decode_batch(images) == loaded.decode_batch(images)


class TestPerturbEval:
    def test_reports_and_csv(self, tiny_checkpoint, tmp_path, capsys):
        out_csv = tmp_path / "report.csv"
        rc = run(
            ["perturb-eval", "--checkpoint", str(tiny_checkpoint),
             "--perturbation", "clean,noise,kerning,elastic", "--sigma", "5",
             "--kerning-delta", "1", "--alpha", "1.5", "--n", "12", "--seed", "2",
             "--out", str(out_csv)]
        )
        assert rc == 0
        reports = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert [r["perturbation"] for r in reports] == ["clean", "noise", "kerning", "elastic"]
        for r in reports:
            assert 0.0 <= r["rr"] <= 1.0 and r["n"] == 12
            assert r["decode_ms_mean"] > 0
        header = out_csv.read_text().splitlines()[0]
        assert header.startswith("perturbation,value,rr,n,decode_ms_mean")

    def test_seeded_reproducibility(self, tiny_checkpoint, capsys):
        args = ["perturb-eval", "--checkpoint", str(tiny_checkpoint), "--perturbation", "noise",
                "--n", "10", "--seed", "7"]
        assert run(args) == 0
        first = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert run(args) == 0
        second = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert first["rr"] == second["rr"]

    def test_unknown_perturbation_exit_2(self, tiny_checkpoint):
        assert run(["perturb-eval", "--checkpoint", str(tiny_checkpoint), "--perturbation", "blur"]) == 2


class TestGaussLab:
    def test_csv_schema_and_scenarios(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = run(["gauss-lab", "--train-steps", "500", "--particles", "200", "--seeds", "3",
                  "--seed", "1", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "scenario,seed,mu_err,sigma_err,ess"
        assert len(lines) == 1 + 3 * 3
        scenarios = {ln.split(",")[0] for ln in lines[1:]}
        assert scenarios == {"mu_pi=(0 0)", "mu_pi=(5 0)", "mu_pi=(8 0)"}

    def test_help_exits_zero(self):
        assert run(["gauss-lab", "--help"]) == 0
        assert run(["--help"]) == 0

    def test_bad_mu_exit_2(self, tmp_path):
        assert run(["gauss-lab", "--mu-pi", "1,2,3", "--train-steps", "10", "--out", str(tmp_path / "x.csv")]) == 2
