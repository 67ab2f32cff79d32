import subprocess
import sys

import numpy as np
import pytest

from collagan import losses as L
from collagan.cli import main, montage
from collagan.netpbm import read_image, write_image


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--subjects", "6", "--size", "16", "--seed", "1", "--force"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.cfg"
    cfg.write_text("generator_depth = 2\ngenerator_width = 4\ndisc_width = 4\ndisc_downsamples = 2\n"
                   "classifier_pretrain_epochs = 1\nbatch_size = 2\n")
    code = main(["train", "--data", str(dataset), "--config", str(cfg), "--out", str(out), "--joint-steps", "0"])
    assert code == 0
    return out


def test_gen_data_layout_and_manifest(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--subjects", "3", "--domains", "4", "--size", "32"]) == 0
    images = sorted((tmp_path / "d").glob("*/*.pgm"))
    assert len(images) == 12
    for p in images:
        assert p.read_bytes().startswith(b"P5\n32 32\n255\n")
    manifest = (tmp_path / "d" / "manifest.txt").read_text()
    assert "seed = 0" in manifest and "identity,inversion,gamma,illumination" in manifest
    assert "subjects = s000,s001,s002" in manifest
    assert "subjects = 3" in capsys.readouterr().out


def test_gen_data_is_byte_deterministic_and_guarded(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / name), "--subjects", "2", "--size", "8"]) == 0
    for p in sorted((tmp_path / "a").rglob("*.*")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--subjects", "2", "--size", "8"]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--subjects", "2", "--size", "8", "--force"]) == 0


def test_train_zero_steps_writes_checkpoint_and_one_row(trained):
    assert (trained / "final.ckpt").exists()
    rows = (trained / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("step,domain,nmse,ssim,loss_mcc")
    assert len(rows) == 2
    assert "generator_depth = 2" in (trained / "config.txt").read_text()
    assert (trained / "split.txt").read_text().startswith("train = ")


def test_impute_writes_image_and_sidecar(dataset, trained, tmp_path):
    subject = dataset / "s000"
    inputs = [f"{d}={subject / f'{d}.pgm'}" for d in (0, 1, 3)]
    out = tmp_path / "x.pgm"
    assert main(["impute", "--ckpt", str(trained / "final.ckpt"), "--inputs", *inputs, "--target", "2",
                 "--out", str(out)]) == 0
    assert read_image(out).shape == (1, 16, 16)
    lines = out.with_suffix(".txt").read_text().splitlines()
    assert lines == ["0 live", "1 live", "2 target", "3 live"]
    assert main(["impute", "--ckpt", str(trained / "final.ckpt"), "--inputs", inputs[0], inputs[1],
                 "--target", "2", "--null", "1", "--out", str(out)]) == 0
    assert out.with_suffix(".txt").read_text().splitlines() == ["0 live", "1 nulled", "2 target", "3 missing"]
    assert main(["impute", "--ckpt", str(trained / "final.ckpt"), "--inputs", inputs[0], "--target", "2",
                 "--null", "0", "--out", str(out)]) == 2


def test_evaluate_oracle_and_checkpoint(dataset, trained, tmp_path):
    assert main(["evaluate", "--oracle", "--data", str(dataset), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "eval.csv").read_text().splitlines()
    assert lines[0] == "domain,nmse,ssim"
    assert [tuple(float(v) for v in l.split(",")[1:]) for l in lines[1:]] == [(0.0, 1.0)] * 4
    montage_img = read_image(tmp_path / "o" / "montage.pgm")
    assert montage_img.shape == (1, 8 * 16 + 7 * 2, 5 * 16 + 4 * 2)
    assert main(["evaluate", "--ckpt", str(trained / "final.ckpt"), "--data", str(dataset),
                 "--out", str(tmp_path / "m"), "--montage-subjects", "1"]) == 0
    assert len((tmp_path / "m" / "eval.csv").read_text().splitlines()) == 5


def test_montage_separators_are_white():
    cell = np.zeros((1, 2, 2))
    img = montage([[cell, cell], [cell]])
    assert img.shape == (1, 6, 6)
    assert np.all(img[:, :, 2:4] == 1) and np.all(img[:, 2:4, :] == 1)
    assert np.all(img[:, 4:, 4:] == 1)


def test_metrics_command(tmp_path, capsys):
    write_image(tmp_path / "a.pgm", np.full((1, 8, 8), 0.6))
    write_image(tmp_path / "b.pgm", np.full((1, 8, 8), 0.5))
    assert main(["metrics", "--a", str(tmp_path / "b.pgm"), "--b", str(tmp_path / "b.pgm")]) == 0
    assert "nmse=0 ssim=1" in capsys.readouterr().out
    assert main(["metrics", "--a", str(tmp_path / "a.pgm"), "--b", str(tmp_path / "b.pgm")]) == 0
    out = capsys.readouterr().out
    # 8-bit files store 0.6 as 153/255 and 0.5 as 128/255
    assert f"nmse={(25 / 128) ** 2:.6g}" in out
    assert L.nmse(np.full((8, 8), 0.6), np.full((8, 8), 0.5)) == pytest.approx(0.04, abs=1e-12)


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "tolerance = 1e-05" in out and "FAIL" not in out


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["gen-data"]) == 1
    assert main(["gen-data", "--out", "x", "--bogus"]) == 1
    assert main(["evaluate", "--data", "x", "--out", "y"]) == 1
    assert main(["impute", "--ckpt", "c", "--inputs", "zero=a.pgm", "--target", "0", "--out", "o"]) == 1


def test_data_errors_exit_two(tmp_path):
    assert main(["metrics", "--a", str(tmp_path / "none.pgm"), "--b", str(tmp_path / "none.pgm")]) == 2
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    assert main(["impute", "--ckpt", str(tmp_path / "bad.ckpt"), "--inputs", "1=a.pgm", "--target", "0",
                 "--out", str(tmp_path / "o.pgm")]) == 2


def test_module_entry_point_runs():
    result = subprocess.run([sys.executable, "-m", "collagan", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "gen-data" in result.stdout
