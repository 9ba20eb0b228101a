import io

import numpy as np
import pytest

from cli_help import golden_path, help_text, targets
from drn.bounds import LossTable, summarize
from drn.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, run
from drn.data import write_synthetic
from drn.imaging import load_image


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    write_synthetic(d, 2, 32, seed=5)
    return d


@pytest.fixture(scope="module")
def run_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.cfg"
    cfg.write_text("crop = 16\nbatch = 2\nwidth = 4\nn_res = 1\n")
    code, text, err = call("train", "--preset", "toy", "--scale", 2, "--config", cfg, "--iterations", 3,
                           "--data", synth_dir, "--out", out / "run1")
    assert code == EXIT_OK, err
    return out / "run1"


@pytest.mark.parametrize("command", targets())
def test_help_matches_golden(command):
    assert help_text(command) == golden_path(command).read_text()


def test_help_lists_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = help_text(name)
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_train_smoke(run_dir):
    assert (run_dir / "metrics.log").exists() and (run_dir / "final.drn").exists()
    assert len((run_dir / "metrics.log").read_text().splitlines()) == 3


def test_train_reproducible(synth_dir, run_dir, tmp_path):
    cfg = run_dir.parent / "tiny.cfg"
    code, _, _ = call("train", "--preset", "toy", "--scale", 2, "--config", cfg, "--iterations", 3,
                      "--data", synth_dir, "--out", tmp_path / "again")
    assert code == EXIT_OK
    for f in ("final.drn", "metrics.log"):
        assert (tmp_path / "again" / f).read_bytes() == (run_dir / f).read_bytes()


def test_eval_smoke(run_dir, synth_dir):
    code, out, _ = call("eval", "--checkpoint", run_dir / "final.drn", "--data", synth_dir, "--scale", 2)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0].split() == ["name", "psnr", "ssim", "gpsnr", "psnr_bicubic"]
    assert lines[-1].startswith("MEAN") and len(lines) == 4


def test_eval_bicubic_only(synth_dir):
    code, out, _ = call("eval", "--data", synth_dir, "--scale", 4, "--channel", "rgb", "--shave", 2)
    assert code == EXIT_OK and "MEAN" in out
    assert call("eval", "--data", synth_dir)[0] == EXIT_USAGE


def test_eval_scale_mismatch(run_dir, synth_dir):
    assert call("eval", "--checkpoint", run_dir / "final.drn", "--data", synth_dir, "--scale", 4)[0] == EXIT_USAGE


def test_upscale(run_dir, synth_dir, tmp_path):
    src = sorted(synth_dir.iterdir())[0]
    code, _, _ = call("upscale", "--checkpoint", run_dir / "final.drn", "--input", src, "--output", tmp_path / "up.png")
    assert code == EXIT_OK
    assert load_image(tmp_path / "up.png").values.shape == (3, 64, 64)


def test_bounds_matches_module(tmp_path):
    t = LossTable(np.random.default_rng(0).uniform(size=(3, 5)), 1.0)
    t.losses[0] = 0
    t.write(tmp_path / "t.txt")
    code, out, _ = call("bounds", "--table", tmp_path / "t.txt", "--delta", 0.05)
    assert code == EXIT_OK
    assert out == summarize(LossTable.read(tmp_path / "t.txt"), 0.05).text()


def test_bounds_monte_carlo_reproducible(tmp_path):
    LossTable(np.random.default_rng(1).uniform(size=(2, 30)), 1.0).write(tmp_path / "t.txt")
    args = ("bounds", "--table", tmp_path / "t.txt", "--mode", "monte_carlo", "--draws", 2000, "--seed", 3)
    assert call(*args)[1] == call(*args)[1]


def test_synth_reproducible(tmp_path):
    for d in ("a", "b"):
        assert call("synth", "--out", tmp_path / d, "--count", 2, "--size", 16, "--seed", 7)[0] == EXIT_OK
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_gradcheck_command():
    code, out, _ = call("gradcheck")
    assert code == EXIT_OK
    assert "conv2d.input.s1p1" in out and out.splitlines()[-1].startswith("MAX")


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--data", "x", "--out", "y", "--bogus"],
                                  ["bounds"], ["train", "--scale", "3", "--data", "x", "--out", "y"]])
def test_usage_errors(argv):
    code, _, err = call(*argv)
    assert code == EXIT_USAGE
    assert "usage" in err


def test_unknown_config_key_lists_keys(tmp_path, synth_dir):
    (tmp_path / "c.cfg").write_text("widht = 4\n")
    code, _, err = call("train", "--config", tmp_path / "c.cfg", "--data", synth_dir, "--out", tmp_path / "o")
    assert code == EXIT_USAGE
    assert "widht" in err and "width" in err and "lr_interval" in err


def test_invalid_settings_are_usage_errors(tmp_path, synth_dir):
    (tmp_path / "c.cfg").write_text("crop = 30\n")
    code, _, _ = call("train", "--config", tmp_path / "c.cfg", "--data", synth_dir, "--out", tmp_path / "o")
    assert code == EXIT_USAGE


def test_runtime_errors(tmp_path):
    assert call("eval", "--checkpoint", tmp_path / "none.drn", "--data", tmp_path)[0] == EXIT_RUNTIME
    (tmp_path / "bad.txt").write_text("2 1\n0 3\n")
    assert call("bounds", "--table", tmp_path / "bad.txt")[0] == EXIT_RUNTIME
    assert call("train", "--data", tmp_path / "missing", "--out", tmp_path / "o")[0] == EXIT_RUNTIME
