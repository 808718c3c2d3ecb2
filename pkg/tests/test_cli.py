import json
import subprocess
import sys

import numpy as np
import pytest

from knitwork.cli import main, read_config_file
from knitwork.imageio import load_png, save_png

SETTINGS = """# tiny networks for fast runs
patch-width = 16
patch-depth = 1
recon-width = 16
recon-depth = 1
disc-width = 16
disc-depth = 1
n-frequencies = 8
kernel-sizes = 3,1
kernel-channels = 2
batch-size = 64
iters = 4
"""


@pytest.fixture
def setup(tmp_path):
    y, x = np.mgrid[0:16, 0:16] / 16
    img = np.stack([x, y, 0.5 * (x + y)], axis=-1) * 0.8 + 0.1
    save_png(img, tmp_path / "img.png")
    save_png(img[::2, ::2], tmp_path / "low.png")
    (tmp_path / "tiny.cfg").write_text(SETTINGS)
    return tmp_path


def run(setup, *args):
    return main([*args, "--config", str(setup / "tiny.cfg"), "-q"])


def test_fit_run_directory_and_determinism(setup):
    for name in ("a", "b"):
        assert run(setup, "fit", str(setup / "img.png"), "--seed", "7", "--out-dir", str(setup / name)) == 0
    for f in ("manifest.json", "losses.csv", "output.png", "final.nkwk", "config.txt"):
        assert (setup / "a" / f).exists()
    for f in ("output.png", "losses.csv"):
        assert (setup / "a" / f).read_bytes() == (setup / "b" / f).read_bytes()
    manifest = json.loads((setup / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["iterations"] == 4
    assert "finished" in manifest and len(manifest["inputs"]) == 1


def test_flags_override_config_file(setup):
    out = setup / "o"
    assert run(setup, "fit", str(setup / "img.png"), "--iters", "2", "--out-dir", str(out)) == 0
    cfg = read_config_file(out / "config.txt")
    assert cfg["iterations"] == 2 and cfg["patch_width"] == 16
    assert len((out / "losses.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize(
    "args",
    [
        ["inpaint", "IMG", "--hole", "5,5,4,4"],
        ["superres", "LOW", "--factor", "2"],
        ["superres", "LOW", "--factor", "2", "--kernel", "delta"],
        ["denoise", "IMG", "--sigma", "25"],
        ["ablate", "IMG", "--stage", "xpatch"],
    ],
)
def test_subcommands_succeed_and_are_deterministic(setup, args):
    args = [str(setup / "img.png") if a == "IMG" else str(setup / "low.png") if a == "LOW" else a for a in args]
    for name in ("r1", "r2"):
        assert run(setup, *args, "--out-dir", str(setup / name)) == 0
    assert (setup / "r1" / "output.png").read_bytes() == (setup / "r2" / "output.png").read_bytes()
    assert (setup / "r1" / "losses.csv").read_bytes() == (setup / "r2" / "losses.csv").read_bytes()


def test_ablate_mlp_equals_baseline(setup):
    img = str(setup / "img.png")
    assert run(setup, "ablate", img, "--stage", "mlp", "--hole", "5,5,4,4", "--out-dir", str(setup / "m")) == 0
    assert run(setup, "inpaint", img, "--baseline", "--hole", "5,5,4,4", "--out-dir", str(setup / "b")) == 0
    assert (setup / "m" / "output.png").read_bytes() == (setup / "b" / "output.png").read_bytes()


def test_eval_identical(setup, capsys):
    img = str(setup / "img.png")
    assert main(["eval", "--ref", img, "--out", img]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "image,task,region,psnr_db,ssim"
    fields = lines[1].split(",")
    assert fields[3] == "inf" and float(fields[4]) == pytest.approx(1.0)


def test_exit_codes(setup):
    img = str(setup / "img.png")
    assert main(["fit", img, "--bogus"]) == 2
    assert run(setup, "fit", img, "--iters", "0", "--out-dir", str(setup / "x")) == 2
    assert run(setup, "fit", str(setup / "missing.png"), "--out-dir", str(setup / "x")) == 2
    assert run(setup, "inpaint", img, "--hole", "0,0,16,16", "--out-dir", str(setup / "x")) == 2
    (setup / "bad.cfg").write_text("nonsense = 3\n")
    assert main(["fit", img, "--config", str(setup / "bad.cfg")]) == 2


def test_runtime_failure_exit_code(setup):
    bad = setup / "nan.cfg"
    bad.write_text(SETTINGS + "lr-g = nan\n")
    assert main(["fit", str(setup / "img.png"), "--config", str(bad), "-q", "--out-dir", str(setup / "n")]) == 3


def test_console_script_module(setup):
    proc = subprocess.run([sys.executable, "-m", "knitwork.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "knitwork" in proc.stdout


def test_config_file_round_trip(tmp_path):
    from knitwork.cli import write_config_file
    from knitwork.trainer import TrainConfig

    cfg = TrainConfig(scales=(1, 2), scale_weights=(1.0, 0.5), adversarial=False, gan_form="minimax")
    write_config_file(cfg, tmp_path / "c.txt")
    assert TrainConfig.from_dict(read_config_file(tmp_path / "c.txt")) == cfg
    write_config_file(TrainConfig(), tmp_path / "d.txt")
    assert TrainConfig.from_dict(read_config_file(tmp_path / "d.txt")) == TrainConfig()
