import json
import subprocess
import sys

import numpy as np
import pytest

from foe import cli
from foe import networks as nw
from foe.optics import toy_config
from foe.tensor import Tensor
from foe.tensor import io as fio

SUBCOMMANDS = ["psf", "simulate", "train-encoder", "train-decoder", "reconstruct", "eval",
               "gradcheck", "bench", "phantom"]


@pytest.fixture
def toy_json(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(toy_config().to_json())
    return str(path)


def _flags(sub):
    parser = cli.build_parser()
    sp = parser._subparsers._group_actions[0].choices[sub]
    return [opt for a in sp._actions for opt in a.option_strings if opt.startswith("--")]


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_documents_every_flag(sub, capsys):
    assert cli.run([sub, "--help"]) == 0
    text = capsys.readouterr().out
    for flag in _flags(sub):
        assert flag in text


def test_top_level_help(capsys):
    assert cli.run(["--help"]) == 0
    text = capsys.readouterr().out
    assert all(s in text for s in SUBCOMMANDS)


def test_psf_zero_mask_peaks_at_focus(tmp_path, toy_json):
    assert cli.run(["psf", "--init", "zeros", "--config", toy_json, "--out", str(tmp_path / "o")]) == 0
    psf = fio.read(tmp_path / "o" / "psf.fot")
    focus = toy_config().z_planes_um.index(0.0)
    assert np.unravel_index(np.argmax(psf), psf.shape)[0] == focus
    assert (tmp_path / "o" / "psf_xy.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")


def test_gradcheck_passes(capsys):
    assert cli.run(["gradcheck", "--seed", "7"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_gradcheck_failure_exit_code():
    assert cli.run(["gradcheck", "--tol", "0"]) == cli.EXIT_NUMERICAL


def test_eval_identical(tmp_path, capsys):
    v = np.random.default_rng(0).random((2, 16, 16))
    fio.write(tmp_path / "a.fot", v)
    assert cli.run(["eval", "--truth", str(tmp_path / "a.fot"), "--recon", str(tmp_path / "a.fot")]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["ms_ssim"] == 1.0 and m["psnr"] == float("inf") and m["l_hnmse"] == 0.0


@pytest.mark.parametrize("argv", [
    ["phantom", "--preset", "D", "--seed", "4"],
    ["psf", "--init", "helix"],
    ["simulate", "--init", "pencils_hex", "--seed", "2"],
    ["train-decoder", "--init", "pencils_hex", "--iters", "3", "--seed", "1"],
    ["train-encoder", "--init", "pencils_hex", "--iters", "2", "--seed", "1"],
])
def test_outputs_byte_identical(tmp_path, argv):
    files = []
    for k in range(2):
        out = tmp_path / str(k)
        assert cli.run(argv + ["--out", str(out)]) == 0
        files.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.fot"))})
    assert files[0] and files[0] == files[1]


def test_train_reconstruct_eval_chain(tmp_path, capsys):
    d = str(tmp_path)
    assert cli.run(["simulate", "--init", "pencils_hex", "--out", d + "/sim"]) == 0
    assert cli.run(["train-decoder", "--init", "pencils_hex", "--iters", "2", "--out", d + "/tr"]) == 0
    recs = [json.loads(x) for x in (tmp_path / "tr" / "metrics.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in recs] == [0, 1]
    assert cli.run(["reconstruct", "--checkpoint", d + "/tr/decoder", "--image", d + "/sim/camera.fot",
                    "--out", d + "/rec"]) == 0
    assert fio.read(tmp_path / "rec" / "recon.fot").shape == (5, 32, 32)
    capsys.readouterr()
    assert cli.run(["eval", "--truth", d + "/sim/volume.fot", "--recon", d + "/rec/recon.fot"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"psnr", "ms_ssim", "l_hnmse"}


def test_config_sections_and_flag_override(tmp_path):
    cfg = {"optics": json.loads(toy_config(camera_pixels=[16, 16], mask_pixels=48).to_json()),
           "train": {"iterations": 50, "lr_theta": 1e-3, "seed": 5},
           "network": {"preset": "fouriernet2d", "args": {"channels": 2}, "input_scale": 0.01},
           "dataset": {"preset": "toy", "nuclei": 3}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert cli.run(["train-decoder", "--config", str(path), "--iters", "2", "--out", str(tmp_path / "o")]) == 0
    used = json.loads((tmp_path / "o" / "config.json").read_text())
    assert used["train"]["iterations"] == 2 and used["train"]["seed"] == 5
    assert used["network"]["input_scale"] == 0.01


@pytest.mark.parametrize("argv", [
    ["psf", "--bogus", "--out", "x"],
    ["psf", "--init", "spiral", "--out", "x"],
    ["train-decoder", "--workers", "0", "--out", "x"],
    ["frobnicate"],
    [],
])
def test_validation_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.run(argv) == cli.EXIT_VALIDATION


def test_bad_config_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.run(["psf", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"optics": {"mask_pixel_um": 5.0}}))
    assert cli.run(["psf", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"optics": {}, "extras": 1}))
    assert cli.run(["psf", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert cli.run(["psf", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_corrupt_tensor_file_exit_1(tmp_path):
    (tmp_path / "x.fot").write_bytes(b"NOPE" + bytes(20))
    assert cli.run(["eval", "--truth", str(tmp_path / "x.fot"), "--recon", str(tmp_path / "x.fot")]) == 1


def test_nan_checkpoint_exit_2(tmp_path):
    net = nw.build_network(nw.preset("fouriernet2d"), seed=0)
    for _, t in net.parameters():
        t.data = np.full_like(t.data, np.nan)
    from foe.training import ReplicaStore
    cli.save_store(ReplicaStore([net]), tmp_path / "dec")
    fio.write(tmp_path / "c.fot", np.ones((32, 32)))
    assert cli.run(["reconstruct", "--checkpoint", str(tmp_path / "dec"), "--image", str(tmp_path / "c.fot"),
                    "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERICAL


def test_foe_log_levels(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("FOE_LOG", "loud")
    assert cli.run(["bench", "--size", "8", "--repeats", "1"]) == 1
    monkeypatch.setenv("FOE_LOG", "error")
    assert cli.run(["psf", "--out", str(tmp_path)]) == 0
    assert "INFO" not in capsys.readouterr().err
    monkeypatch.setenv("FOE_LOG", "debug")
    assert cli.run(["psf", "--out", str(tmp_path)]) == 0
    assert "INFO" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "foe", "bench", "--size", "8", "--repeats", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ratio" in res.stdout
