import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from cropenhance import imageio
from cropenhance.cli import main
from cropenhance.train import CHECKPOINT_NAME, HISTORY_NAME, load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cli_textures(tmp_path_factory):
    from cropenhance.synthgen import write_texture_images

    root = tmp_path_factory.mktemp("clitex")
    write_texture_images(root / "fg", 6, size=128, seed=5)
    write_texture_images(root / "bg", 6, size=128, seed=6)
    return root


@pytest.fixture(scope="module")
def gen_dataset(cli_textures, tmp_path_factory):
    out = tmp_path_factory.mktemp("gendata") / "set"
    rc = run(
        "gen", "--n", 3, "--seed", 4, "--fg-dir", cli_textures / "fg",
        "--bg-dir", cli_textures / "bg", "--out", out,
    )
    assert rc == 0
    return out / "manifest.jsonl"


@pytest.fixture(scope="module")
def trained_dir(gen_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    rc = run(
        "train", "--manifest", gen_dataset, "--out", out, "--steps", 2,
        "--seed", 3, "--batch", 2, "--no-enhancer",
    )
    assert rc == 0
    return out


class TestGen:
    def test_identical_reruns(self, cli_textures, tmp_path):
        for sub in ("a", "b"):
            rc = run(
                "gen", "--n", 2, "--seed", 7, "--fg-dir", cli_textures / "fg",
                "--bg-dir", cli_textures / "bg", "--out", tmp_path / sub,
            )
            assert rc == 0
        names = [p.name for p in (tmp_path / "a").iterdir()]
        match, mismatch, errors = filecmp.cmpfiles(
            tmp_path / "a", tmp_path / "b", names, shallow=False
        )
        assert not mismatch and not errors

    def test_missing_required_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("gen", "--n", 2, "--seed", 7)
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run("gen", "--bogus", 1)
        assert exc.value.code == 2

    def test_output_sizes_default_224(self, cli_textures, tmp_path):
        rc = run(
            "gen", "--n", 2, "--seed", 9, "--fg-dir", cli_textures / "fg",
            "--bg-dir", cli_textures / "bg", "--out", tmp_path / "s224",
        )
        assert rc == 0
        lines = (tmp_path / "s224" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 2
        for name, side in (("_photo.png", 224), ("_gt.png", 224), ("_gt2x.png", 448)):
            imgs = sorted((tmp_path / "s224").glob(f"*{name}"))
            assert len(imgs) == 2
            for p in imgs:
                assert imageio.load_image(p).shape == (3, side, side)

    def test_bad_directory_exits_1(self, tmp_path):
        rc = run(
            "gen", "--n", 1, "--seed", 0, "--fg-dir", tmp_path / "nope",
            "--bg-dir", tmp_path / "nope", "--out", tmp_path / "o",
        )
        assert rc == 1


class TestTrain:
    def test_zero_steps_checkpoint_is_init(self, gen_dataset, tmp_path):
        rc = run(
            "train", "--manifest", gen_dataset, "--out", tmp_path, "--steps", 0,
            "--seed", 3, "--no-enhancer",
        )
        assert rc == 0
        from cropenhance.model import CropEnhanceModel, ModelConfig
        from cropenhance.train import TrainConfig

        ckpt = load_checkpoint(tmp_path / CHECKPOINT_NAME)
        cfg = TrainConfig.from_dict(ckpt.config)
        fresh = CropEnhanceModel(cfg.model)
        for name, p in fresh.named_parameters():
            np.testing.assert_array_equal(ckpt.tensors[name], p.data)

    def test_two_croppers_structure(self, gen_dataset, tmp_path):
        rc = run(
            "train", "--manifest", gen_dataset, "--out", tmp_path, "--steps", 0,
            "--seed", 3, "--croppers", 2, "--no-enhancer",
        )
        assert rc == 0
        ckpt = load_checkpoint(tmp_path / CHECKPOINT_NAME)
        prefixes = {n.split(".")[0] + "." + n.split(".")[1]
                    for n in ckpt.tensors if n.startswith("croppers.")}
        assert prefixes == {"croppers.0", "croppers.1"}
        assert not any(n.startswith("enhancer.") for n in ckpt.tensors)

    def test_history_has_step_rows(self, trained_dir):
        lines = (trained_dir / HISTORY_NAME).read_text().splitlines()
        assert len(lines) == 3  # header + 2 steps

    def test_import_gamma_flag(self, gen_dataset, trained_dir, tmp_path):
        rc = run(
            "train", "--manifest", gen_dataset, "--out", tmp_path, "--steps", 0,
            "--seed", 11, "--no-enhancer",
            "--import-gamma", trained_dir / CHECKPOINT_NAME,
        )
        assert rc == 0
        donor = load_checkpoint(trained_dir / CHECKPOINT_NAME)
        got = load_checkpoint(tmp_path / CHECKPOINT_NAME)
        feature_names = [n for n in donor.tensors if n.startswith("features.")]
        assert feature_names
        for n in feature_names:
            np.testing.assert_array_equal(donor.tensors[n], got.tensors[n])


class TestEval:
    def test_eval_writes_report(self, gen_dataset, trained_dir, tmp_path):
        report_path = tmp_path / "report.json"
        rc = run(
            "eval", "--manifest", gen_dataset, "--checkpoint",
            trained_dir / CHECKPOINT_NAME, "--resolution", 224,
            "--out", report_path,
        )
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert len(report["samples"]) == 3
        for key in ("psnr_db", "ssim", "mse"):
            vals = [s[key] for s in report["samples"]]
            assert report["means"][key] == pytest.approx(float(np.mean(vals)))

    def test_eval_twice_identical_bytes(self, gen_dataset, trained_dir, tmp_path):
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        for out in (out1, out2):
            rc = run(
                "eval", "--manifest", gen_dataset, "--checkpoint",
                trained_dir / CHECKPOINT_NAME, "--resolution", 224, "--out", out,
            )
            assert rc == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_eval_hr_resolution(self, gen_dataset, trained_dir, tmp_path):
        rc = run(
            "eval", "--manifest", gen_dataset, "--checkpoint",
            trained_dir / CHECKPOINT_NAME, "--resolution", 448,
            "--out", tmp_path / "r.json",
        )
        assert rc == 0
        assert json.loads((tmp_path / "r.json").read_text())["resolution"] == 448

    def test_bad_checkpoint_path_exits_1(self, gen_dataset, tmp_path):
        rc = run(
            "eval", "--manifest", gen_dataset, "--checkpoint", tmp_path / "no.dcec",
            "--resolution", 224, "--out", tmp_path / "r.json",
        )
        assert rc == 1


class TestInfer:
    def test_writes_three_outputs(self, gen_dataset, trained_dir, tmp_path):
        photo = sorted(gen_dataset.parent.glob("*_photo.png"))[0]
        out = tmp_path / "infer"
        rc = run(
            "infer", "--checkpoint", trained_dir / CHECKPOINT_NAME,
            "--input", photo, "--out", out,
        )
        assert rc == 0
        cropped = imageio.load_image(out / "cropped.png")
        enhanced = imageio.load_image(out / "enhanced.png")
        assert cropped.shape == (3, 224, 224)
        assert enhanced.shape == (3, 448, 448)
        thetas = json.loads((out / "affine.json").read_text())
        assert len(thetas) == 1 and len(thetas[0]) == 6
        assert all(np.isfinite(v) for v in thetas[0])

    def test_untrained_identity_crop_matches_input(self, gen_dataset, cli_textures, tmp_path):
        rc = run(
            "train", "--manifest", gen_dataset, "--out", tmp_path / "init",
            "--steps", 0, "--seed", 5, "--no-enhancer",
        )
        assert rc == 0
        photo = sorted(gen_dataset.parent.glob("*_photo.png"))[0]
        rc = run(
            "infer", "--checkpoint", tmp_path / "init" / CHECKPOINT_NAME,
            "--input", photo, "--out", tmp_path / "out",
        )
        assert rc == 0
        np.testing.assert_array_equal(
            imageio.load_image(tmp_path / "out" / "cropped.png"),
            imageio.load_image(photo),
        )


class TestSelftest:
    def test_exit_zero(self, capsys):
        assert run("selftest") == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out
