from dataclasses import replace

import numpy as np
import pytest

from drn.data import Dataset
from drn.errors import ContractError, DataError, TrainingError
from drn.imaging import ImagePlane, resample_array, save_image
from drn.metrics import PSNR_INF
from drn.model import init_model
from drn.train import (
    ABLATION_CELLS, PRESETS, TrainConfig, _stack, batches, evaluate, lr_at, make_batch,
    preset, train, train_loop, training_loss,
)
from drn.tensor import backward

TINY = dict(scale=2, crop=16, batch=2, width=4, n_res=1, iterations=3, lr=1e-3, lr_interval=1000)


@pytest.fixture(scope="module")
def ds():
    return Dataset.synthetic(3, 32, seed=9)


def test_full_scale_preset_values():
    cfg = PRESETS["paper"]
    assert (cfg.lam, cfg.lr, cfg.lr_decay, cfg.lr_interval, cfg.iterations) == (2.0, 1e-5, 0.1, 500_000, 1_000_000)
    assert (cfg.scale, cfg.crop, cfg.batch) == (4, 128, 16)


def test_lr_schedule():
    cfg = PRESETS["paper"]
    assert lr_at(cfg, 0) == 1e-5
    assert lr_at(cfg, 499_999) == 1e-5
    assert lr_at(cfg, 500_000) == pytest.approx(1e-6, rel=1e-12)
    vals = [lr_at(cfg, i) for i in range(0, 2_000_000, 50_000)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(scale=4, crop=30)
    with pytest.raises(ContractError):
        TrainConfig(scale=8, crop=32)
    with pytest.raises(ContractError):
        TrainConfig(batch=0)
    with pytest.raises(ContractError):
        preset("huge")


def test_batch_is_pure_function(ds):
    cfg = TrainConfig(**TINY)
    a, b = make_batch(ds, cfg, 5), make_batch(ds, cfg, 5)
    assert all(p.y.tobytes() == q.y.tobytes() for p, q in zip(a, b))
    c = make_batch(ds, cfg, 6)
    assert any(p.y.tobytes() != q.y.tobytes() for p, q in zip(a, c))


@pytest.mark.parametrize("scale", [2, 4, 8])
def test_sample_pipeline(scale):
    data = Dataset.synthetic(1, 64, seed=3)
    cfg = TrainConfig(scale=scale, crop=64, batch=1, width=2, n_res=0)
    (pair,) = make_batch(data, cfg, 0)
    np.testing.assert_array_equal(pair.y, data.images[0])
    assert resample_array(pair.y, scale, "down").tobytes() == pair.x.tobytes()
    for l, t in enumerate(pair.targets(), start=1):
        assert t.shape[-1] == pair.x.shape[-1] << l


def test_prefetch_same_batches(ds):
    strict = TrainConfig(**TINY)
    ahead = replace(strict, prefetch=2)
    for p, q in zip(batches(ds, strict), batches(ds, ahead)):
        assert all(a.y.tobytes() == b.y.tobytes() for a, b in zip(p, q))


def test_batch_errors():
    with pytest.raises(DataError):
        make_batch(Dataset([], []), TrainConfig(**TINY), 0)
    small = Dataset(["tiny.png"], [np.zeros((3, 8, 8))])
    with pytest.raises(DataError, match="tiny.png"):
        make_batch(small, TrainConfig(**TINY), 0)


def test_no_dual_gives_zero_dual_grads(ds):
    cfg = TrainConfig(**TINY, use_dual=False)
    model = init_model(2, 4, 1, seed=0, use_dual=False, dtype=np.float64)
    x, ys = _stack(make_batch(ds, cfg, 0), np.float64)
    backward(training_loss(model, x, ys, cfg))
    for p in model.dual_parameters():
        assert p.grad is None or not p.grad.any()
    assert any(np.abs(p.grad).sum() > 0 for p in model.primal_parameters())


def test_zero_lr_leaves_params(ds):
    cfg = TrainConfig(**{**TINY, "iterations": 1, "lr": 0.0})
    model = init_model(2, 4, 1, seed=0)
    before = {k: v.data.copy() for k, v in model.params.items()}
    train_loop(model, ds, cfg)
    assert all(np.array_equal(before[k], model.params[k].data) for k in before)


def test_non_finite_loss_aborts():
    bad = Dataset(["nan.png"], [np.full((3, 32, 32), np.nan)])
    with pytest.raises(TrainingError, match="iteration 0.*max \\|grad\\|"):
        train(bad, TrainConfig(**TINY))


def test_same_seed_identical_artifacts(ds, tmp_path):
    cfg = TrainConfig(**TINY)
    train(ds, cfg, out_dir=tmp_path / "a")
    train(ds, cfg, out_dir=tmp_path / "b")
    for f in ("final.drn", "metrics.log"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    lines = (tmp_path / "a" / "metrics.log").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("0\t")


def test_periodic_checkpoints(ds, tmp_path):
    train(ds, TrainConfig(**TINY, checkpoint_every=2), out_dir=tmp_path)
    assert (tmp_path / "iter_2.drn").exists() and (tmp_path / "final.drn").exists()


def test_evaluate_report_and_read_only(ds, tmp_path):
    model = init_model(2, 4, 1, seed=0)
    before = {k: v.data.tobytes() for k, v in model.params.items()}
    report = evaluate(model, ds, 2)
    assert [r.name for r in report.rows] == ds.names
    assert report.table().splitlines()[-1].startswith("MEAN")
    assert all(model.params[k].data.tobytes() == before[k] for k in before)
    base = evaluate(None, ds, 2)
    assert [r.psnr for r in base.rows] == [r.psnr_bicubic for r in base.rows]


def test_evaluate_constant_image_bicubic_inf(tmp_path):
    save_image(ImagePlane(np.full((3, 24, 24), 0.4)), tmp_path / "flat.png")
    row = evaluate(None, tmp_path, 2).rows[0]
    assert row.psnr_bicubic == PSNR_INF


def test_evaluate_skips_unreadable(tmp_path, caplog):
    save_image(ImagePlane(np.full((3, 24, 24), 0.4)), tmp_path / "ok.png")
    (tmp_path / "broken.png").write_bytes(b"junk")
    assert [r.name for r in evaluate(None, tmp_path, 2).rows] == ["ok.png"]
    assert "broken.png" in caplog.text


def test_evaluate_empty_dir(tmp_path):
    with pytest.raises(DataError):
        evaluate(None, tmp_path, 2)


def test_ablation_cells():
    assert list(ABLATION_CELLS) == ["plain", "dual", "progressive", "dual+progressive"]
    assert ABLATION_CELLS["plain"] == dict(use_dual=False, progressive=False)


def test_mean_row_is_mean_of_rows(ds):
    report = evaluate(init_model(2, 4, 1, seed=0), ds, 2)
    for col in ("psnr", "ssim", "gpsnr", "psnr_bicubic"):
        assert getattr(report.mean, col) == pytest.approx(np.mean([getattr(r, col) for r in report.rows]), abs=1e-6)
