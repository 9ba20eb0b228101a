"""Acceptance criteria 1-8, one PASS/FAIL/SKIP line each (also listed in the terminal summary)."""
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from drn.bounds import (
    LossTable, bound_finite, bound_rademacher, empirical_rademacher, rademacher_exhaustive,
    rademacher_monte_carlo,
)
from drn.data import Dataset, synth_texture
from drn.gradcheck import THRESHOLD, run_all
from drn.imaging import ImagePlane, build_mask
from drn.losses import loss_gs, loss_mae
from drn.metrics import ChannelMode, EvalConfig
from drn.model import drn_forward, init_model, load_checkpoint, save_checkpoint
from drn.tensor import Tensor
from drn.train import ablate, evaluate, preset, train

TOY_TRAIN = dict(n=32, size=128, seed=1)
TOY_EVAL = dict(n=8, size=96, seed=2)
ABLATION_ITERATIONS = 1000

ROOT = Path(__file__).resolve().parents[1]
SET5_CANDIDATES = [os.environ.get("DRN_SET5", ""), ROOT / "data" / "Set5", ROOT / "data" / "set5"]


class Notes:
    def __init__(self):
        self.items = []

    def __call__(self, text):
        self.items.append(text)


@contextmanager
def criterion(log, number, title):
    notes = Notes()
    start = time.perf_counter()
    try:
        yield notes
    except pytest.skip.Exception as exc:
        line = f"criterion {number} SKIP  {title}: {exc.msg}"
        raise
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        line = f"criterion {number} FAIL  {title}: {msg}"
        raise
    else:
        notes(f"wall {time.perf_counter() - start:.1f}s")
        line = f"criterion {number} PASS  {title}: {'; '.join(notes.items)}"
    finally:
        print(line)
        log.append(line)


@pytest.fixture(scope="module")
def toy_data():
    return Dataset.synthetic(**TOY_TRAIN), Dataset.synthetic(**TOY_EVAL)


@pytest.fixture(scope="module")
def toy_run(toy_data, tmp_path_factory):
    cfg = preset("toy", scale=2)
    out = tmp_path_factory.mktemp("toy_a")
    start = time.perf_counter()
    result = train(toy_data[0], cfg, out_dir=out)
    return cfg, result, out, time.perf_counter() - start


def test_criterion_1_gradient_checks(acceptance_log):
    with criterion(acceptance_log, 1, "autodiff vs central differences") as note:
        start = time.perf_counter()
        errors = run_all(seed=0, h=1e-5)
        elapsed = time.perf_counter() - start
        required = ["conv2d.input", "conv2d.weight", "conv2d.bias", "pixel_shuffle", "add", "sub", "mul",
                    "scale", "relu", "abs", "mse", "mae", "loss_g", "loss_gp", "loss_gs",
                    "loss_dual.primal", "loss_dual.dual", "loss_total.r2"]
        for key in required:
            assert any(name.startswith(key) for name in errors), f"missing check {key}"
        name, worst = max(errors.items(), key=lambda kv: kv[1])
        note(f"{len(errors)} checks, max error {worst:.2e} ({name})")
        assert worst < THRESHOLD, f"{name}: {worst:.3e} >= {THRESHOLD}"
        assert elapsed < 120, f"took {elapsed:.0f}s"


def test_criterion_2_mask_identities(acceptance_log):
    with criterion(acceptance_log, 2, "mask decomposition identities") as note:
        rng = np.random.default_rng(2)
        worst = 0.0
        for k in range(100):
            v = rng.uniform(size=(3, 32, 32)) if k % 2 else synth_texture(32, (2, k))
            m = build_mask(ImagePlane(v)).mask
            worst = max(worst, float(np.abs(m * v + (1 - m) * v - v).max()))
            assert m.min() >= 0 and m.max() <= 1
        assert worst <= 1e-6
        flat = np.full((1, 3, 16, 16), 0.42)
        assert not build_mask(ImagePlane(flat[0])).mask.any()
        pred = Tensor(rng.uniform(size=flat.shape))
        for lam in (0.5, 2.0):
            gs = float(loss_gs(Tensor(flat), pred, lam).data.item())
            assert gs == lam * float(loss_mae(Tensor(flat), pred).data.item())
        note(f"max identity error {worst:.1e} over 100 images; uniform image gives M=0 and GS = lam*MAE")


def _find_set5():
    for cand in SET5_CANDIDATES:
        if str(cand) and Path(cand).is_dir():
            return Path(cand)
    return None


def test_criterion_3_bicubic_set5(acceptance_log):
    with criterion(acceptance_log, 3, "SET5 x4 bicubic baseline") as note:
        root = _find_set5()
        if root is None:
            pytest.skip("SET5 folder not found (set DRN_SET5 or add data/Set5)")
        start = time.perf_counter()
        report = evaluate(None, root, 4, EvalConfig(ChannelMode.LUMA, 4))
        elapsed = time.perf_counter() - start
        note(f"PSNR {report.mean.psnr:.2f} dB, SSIM {report.mean.ssim:.4f} on {len(report.rows)} images")
        assert abs(report.mean.psnr - 28.42) <= 0.5
        assert abs(report.mean.ssim - 0.810) <= 0.02
        assert elapsed < 30


def test_criterion_4_toy_training(acceptance_log, toy_run, toy_data):
    with criterion(acceptance_log, 4, "toy x2 training convergence") as note:
        cfg, result, _, elapsed = toy_run
        early, late = result.moving_average(99), result.moving_average(cfg.iterations - 1)
        report = evaluate(result.model, toy_data[1], 2)
        gain = report.mean.psnr - report.mean.psnr_bicubic
        note(f"moving-average loss {early:.1f} -> {late:.1f}")
        note(f"held-out PSNR {report.mean.psnr:.3f} vs bicubic {report.mean.psnr_bicubic:.3f} (+{gain:.2f} dB)")
        note(f"training {elapsed:.0f}s")
        assert cfg.iterations == 2000
        assert late < early
        assert gain >= 0.3
        assert elapsed < 600


def test_criterion_5_ablation(acceptance_log, toy_data):
    with criterion(acceptance_log, 5, "four-cell ablation at x4") as note:
        cfg = preset("toy", scale=4, iterations=ABLATION_ITERATIONS)
        report = ablate(toy_data[0], cfg, toy_data[1])
        print(report.table())
        psnrs = {c.name: c.psnr for c in report.cells}
        note(", ".join(f"{k} {v:.4f}" for k, v in psnrs.items()))
        assert list(psnrs) == ["plain", "dual", "progressive", "dual+progressive"]
        assert all(math.isfinite(v) for v in psnrs.values())
        assert all(math.isfinite(c.final_loss) for c in report.cells)
        assert psnrs["dual+progressive"] >= psnrs["plain"] - 0.05


def test_criterion_6_bounds(acceptance_log):
    with criterion(acceptance_log, 6, "generalization bounds") as note:
        start = time.perf_counter()
        assert bound_finite(1, 1.0, 50, 1.0) == 0.0
        assert bound_finite(1, 7.5, 3, 1.0) == 0.0
        assert abs(bound_finite(10, 1.0, 200, 0.05) - 0.11509) <= 1e-5
        assert empirical_rademacher(LossTable([[0.0], [1.0]], 1.0), "exhaustive") == 0.5
        rng = np.random.default_rng(6)
        gaps = []
        for k in range(10):
            t = LossTable(rng.uniform(size=(int(rng.integers(2, 6)), int(rng.integers(2, 12)))), 1.0)
            mc, _ = rademacher_monte_carlo(t, 100_000, seed=k)
            gaps.append(abs(mc - rademacher_exhaustive(t)))
        assert max(gaps) < 0.02
        for M in (0.5, 1.0, 2.0):
            for delta in (0.01, 0.05, 0.5):
                for m in (10, 50, 200):
                    f = bound_finite(5, M, m, delta)
                    assert bound_finite(5, M, m * 2, delta) <= f
                    assert bound_finite(5, M * 2, m, delta) >= f
                    assert bound_finite(5, M, m, delta / 2) >= f
                    for v in ("population", "empirical"):
                        b = bound_rademacher(0.1, 0.05, M, m, delta, v)
                        assert bound_rademacher(0.1, 0.05, M, m * 2, delta, v) <= b
                        assert bound_rademacher(0.1, 0.05, M * 2, m, delta, v) >= b
                        assert bound_rademacher(0.1, 0.05, M, m, delta / 2, v) >= b
        elapsed = time.perf_counter() - start
        note(f"bound_finite(10,1,200,.05) = {bound_finite(10, 1.0, 200, 0.05):.6f}; max MC gap {max(gaps):.4f}")
        assert elapsed < 60


def test_criterion_7_shapes_and_checkpoint(acceptance_log, tmp_path):
    with criterion(acceptance_log, 7, "architecture shapes and checkpoint round trip") as note:
        rng = np.random.default_rng(7)
        for r in (2, 4, 8):
            model = init_model(r, width=8, n_res=1, seed=r)
            x = Tensor(rng.uniform(size=(1, 3, 8, 10)).astype(np.float32))
            out = drn_forward(model, x)
            assert model.levels == len(out.preds) == int(math.log2(r))
            for l, (p, d, i) in enumerate(zip(out.preds, out.duals, out.inputs), start=1):
                assert p.shape == (1, 3, 8 << l, 10 << l)
                assert d.shape == i.shape
            save_checkpoint(model, tmp_path / f"r{r}.drn")
            back = drn_forward(load_checkpoint(tmp_path / f"r{r}.drn"), x)
            for a, b in zip(out.preds + out.duals, back.preds + back.duals):
                assert a.data.tobytes() == b.data.tobytes()
        note("L = 1, 2, 3 blocks for x2, x4, x8; dual outputs match block inputs; outputs bit-identical after reload")


def test_criterion_8_determinism(acceptance_log, toy_run, toy_data, tmp_path):
    with criterion(acceptance_log, 8, "strict-mode determinism") as note:
        cfg, _, first, _ = toy_run
        assert cfg.prefetch == 0
        train(toy_data[0], cfg, out_dir=tmp_path)
        for f in ("final.drn", "metrics.log"):
            assert (first / f).read_bytes() == (tmp_path / f).read_bytes(), f"{f} differs"
        note("two seeded runs of criterion 4: checkpoints and metric logs byte-identical")
