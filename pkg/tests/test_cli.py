import json

import numpy as np
import pytest

from ssat import checks
from ssat.checks import CheckResult
from ssat.cli import main
from ssat.datagen.faces import generate_face
from ssat.datagen.io import read_image, write_image, write_parsing
from ssat.layers import NetWidths
from ssat.trainer import TrainConfig, read_log


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Three faces on disk plus a checkpoint of a tiny model trained for two iterations."""
    d = tmp_path_factory.mktemp("cli")
    for name, seed, domain in (("t", 21, "non_makeup"), ("r1", 22, "makeup"), ("r2", 23, "makeup")):
        f = generate_face(seed, domain=domain)
        write_image(d / f"{name}.png", f.rgb)
        write_parsing(d / f"{name}_parsing.png", f.parsing)
    cfg = TrainConfig.desk(widths=NetWidths(base=4, semantic=2), n_bare=2, n_makeup=2, checkpoint_every=0)
    (d / "tiny.json").write_text(json.dumps(cfg.to_dict()))
    assert main(["train", "--config", str(d / "tiny.json"), "--out", str(d / "run"), "--iterations", "2"]) == 0
    return d


def _face_args(d, *refs):
    args = ["--checkpoint", str(d / "run" / "final.ssat"), "--target", str(d / "t.png"), "--target-parsing", str(d / "t_parsing.png")]
    for r in refs:
        args += ["--reference", str(d / f"{r}.png"), "--reference-parsing", str(d / f"{r}_parsing.png")]
    return args


class TestTrain:
    def test_log_and_overrides(self, workdir):
        recs = read_log(workdir / "run" / "train_log.ndjson")
        assert [r["iteration"] for r in recs] == [0, 1]

    def test_resume(self, workdir, tmp_path):
        code = main(["train", "--resume", str(workdir / "run" / "final.ssat"), "--iterations", "3", "--out", str(tmp_path)])
        assert code == 0
        assert [r["iteration"] for r in read_log(tmp_path / "train_log.ndjson")] == [2]

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.json").write_text('{"lr": 1}')
        assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1


class TestInference:
    def test_transfer_writes_inset(self, workdir, tmp_path):
        out = tmp_path / "o.png"
        assert main(["transfer", *_face_args(workdir, "r1"), "--out", str(out)]) == 0
        assert read_image(out).shape == (3, 64, 64)
        assert read_image(tmp_path / "o_corr.png").shape == (3, 64, 64)

    def test_removal(self, workdir, tmp_path):
        out = tmp_path / "o.png"
        assert main(["removal", *_face_args(workdir, "r1"), "--out", str(out), "--no-inset"]) == 0
        assert out.exists() and not (tmp_path / "o_corr.png").exists()

    def test_interpolate_alpha_one_equals_transfer(self, workdir, tmp_path):
        main(["transfer", *_face_args(workdir, "r1"), "--out", str(tmp_path / "a.png"), "--no-inset"])
        main(["interpolate", *_face_args(workdir, "r1", "r2"), "--alpha", "1.0", "--out", str(tmp_path / "b.png")])
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_interpolate_bad_alpha(self, workdir, tmp_path):
        assert main(["interpolate", *_face_args(workdir, "r1", "r2"), "--alpha", "1.5", "--out", str(tmp_path / "b.png")]) == 2

    def test_partial(self, workdir, tmp_path):
        args = ["partial", *_face_args(workdir, "r1", "r2"), "--assign", "Lip=0", "--assign", "Eye=1", "--out", str(tmp_path / "p.png")]
        assert main(args) == 0
        assert main(args[:-2] + ["--assign", "Nose=0", "--out", str(tmp_path / "q.png")]) == 2
        assert main(args[:-2] + ["--assign", "Face=5", "--out", str(tmp_path / "q.png")]) == 2

    def test_manifest(self, workdir, tmp_path):
        job = {
            "mode": "transfer",
            "target": {"rgb": "t.png", "parsing": "t_parsing.png"},
            "references": [{"rgb": "r1.png", "parsing": "r1_parsing.png"}],
            "out": str(tmp_path / "m.png"),
        }
        (workdir / "job.json").write_text(json.dumps(job))
        ckpt = ["--checkpoint", str(workdir / "run" / "final.ssat")]
        assert main(["transfer", *ckpt, "--manifest", str(workdir / "job.json"), "--no-inset"]) == 0
        main(["transfer", *_face_args(workdir, "r1"), "--out", str(tmp_path / "d.png"), "--no-inset"])
        assert (tmp_path / "m.png").read_bytes() == (tmp_path / "d.png").read_bytes()
        assert main(["interpolate", *ckpt, "--manifest", str(workdir / "job.json")]) == 2

    def test_video(self, workdir, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        for i in range(2):
            f = generate_face(40 + i)
            write_image(frames / f"f{i}_rgb.png", f.rgb)
            write_parsing(frames / f"f{i}_parsing.png", f.parsing)
        args = ["video", "--checkpoint", str(workdir / "run" / "final.ssat"), "--reference", str(workdir / "r1.png")]
        args += ["--reference-parsing", str(workdir / "r1_parsing.png"), "--frames", str(frames), "--out", str(tmp_path / "v")]
        assert main(args) == 0
        assert sorted(p.name for p in (tmp_path / "v").iterdir()) == ["f0_out.png", "f1_out.png"]

    def test_inputs_not_mutated(self, workdir, tmp_path):
        before = (workdir / "t.png").read_bytes()
        main(["transfer", *_face_args(workdir, "r1"), "--out", str(tmp_path / "o.png")])
        assert (workdir / "t.png").read_bytes() == before


class TestExitCodes:
    def test_bad_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["transfer", "--bogus"])
        assert exc.value.code == 2

    def test_missing_fields(self, tmp_path):
        assert main(["transfer", "--out", str(tmp_path / "x.png")]) == 2

    def test_missing_file(self, workdir, tmp_path):
        args = _face_args(workdir, "r1")
        args[args.index("--target") + 1] = str(tmp_path / "missing.png")
        assert main(["transfer", *args, "--out", str(tmp_path / "o.png")]) == 3

    def test_corrupt_checkpoint(self, workdir, tmp_path):
        (tmp_path / "bad.ssat").write_bytes(b"nonsense")
        args = _face_args(workdir, "r1")
        args[1] = str(tmp_path / "bad.ssat")
        assert main(["transfer", *args, "--out", str(tmp_path / "o.png")]) == 1

    def test_bad_image(self, workdir, tmp_path):
        (tmp_path / "junk.png").write_bytes(b"not an image")
        args = _face_args(workdir, "r1")
        args[args.index("--target") + 1] = str(tmp_path / "junk.png")
        assert main(["transfer", *args, "--out", str(tmp_path / "o.png")]) == 1


class TestDatagen:
    def test_pairs(self, tmp_path):
        assert main(["datagen", "--pairs", "8", "--seed", "7", "--out", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["pairs"]) == 8

    def test_reproducible(self, tmp_path):
        main(["datagen", "--pairs", "2", "--seed", "3", "--out", str(tmp_path / "a"), "--format", "ppm"])
        main(["datagen", "--pairs", "2", "--seed", "3", "--out", str(tmp_path / "b"), "--format", "ppm"])
        a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.ppm"))
        assert a and all((tmp_path / "a" / p).read_bytes() == (tmp_path / "b" / p).read_bytes() for p in a)

    def test_invalid_count(self, tmp_path):
        assert main(["datagen", "--pairs", "7", "--out", str(tmp_path)]) == 2


class TestChecks:
    def test_gradcheck_subset(self, capsys):
        assert main(["gradcheck", "--seeds", "2", "--only", "tanh", "--only", "matmul"]) == 0
        out = capsys.readouterr().out
        assert "tanh" in out and "matmul" in out and "conv2d_shift" not in out

    def test_invariant_failure_exit(self, monkeypatch):
        monkeypatch.setattr(checks, "run_gradchecks", lambda **kw: [CheckResult("x", False, 1.0)])
        assert main(["gradcheck"]) == 4

    def test_selfcheck(self, capsys):
        assert main(["selfcheck"]) == 0
        assert "PASS" in capsys.readouterr().out
