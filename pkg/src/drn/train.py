"""Training pipeline, evaluation over image sets and the four-cell ablation."""
from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .data import Dataset
from .errors import ContractError, DataError, TrainingError
from .imaging import crop_array, crop_to_multiple, resample_array
from .losses import LossKind
from .losses import loss_total
from .metrics import EvalConfig, gradient_psnr, psnr, ssim
from .model import DrnModel, init_model, save_checkpoint, upscale
from .tensor import AdamState, Tensor, adam_step, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    scale: int = 4
    crop: int = 128
    batch: int = 16
    lam: float = 2.0
    loss: str = "gs"           # kind used for both primal and dual terms
    lr: float = 1e-5
    lr_decay: float = 0.1
    lr_interval: int = 500_000
    iterations: int = 1_000_000
    seed: int = 0
    width: int = 64
    n_res: int = 7
    use_dual: bool = True
    progressive: bool = True
    checkpoint_every: int = 0  # 0: final checkpoint only
    prefetch: int = 0          # batches prepared ahead; 0 is strict deterministic mode

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scale not in (2, 4, 8):
            raise ContractError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.crop % self.scale:
            raise ContractError(f"crop {self.crop} is not divisible by scale {self.scale}")
        if self.crop // self.scale < 8:
            raise ContractError(f"crop {self.crop} gives LR patches under 8x8 at scale {self.scale}")
        if self.batch < 1 or self.iterations < 1:
            raise ContractError("batch and iterations must be >= 1")
        if self.lam < 0 or self.lr < 0 or self.lr_interval < 1:
            raise ContractError("lam and lr must be non-negative, lr_interval positive")
        LossKind(self.loss, self.lam)

    @property
    def levels(self) -> int:
        return self.scale.bit_length() - 1

    def loss_kind(self) -> LossKind:
        return LossKind(self.loss, self.lam)


PRESETS = {
    "paper": TrainConfig(),
    "toy": TrainConfig(scale=2, crop=64, batch=8, lr=1e-4, lr_interval=2000,
                       iterations=2000, width=16, n_res=2),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    if iteration < 0:
        raise ContractError("iteration must be >= 0")
    return cfg.lr * cfg.lr_decay ** (iteration // cfg.lr_interval)


# ---------------------------------------------------------------- batches

@dataclass
class SamplePair:
    y: np.ndarray                 # HR crop (3, S, S)
    x: np.ndarray                 # LR input (3, S/r, S/r)
    intermediates: list[np.ndarray] = field(default_factory=list)  # y_1 .. y_{L-1}

    def targets(self) -> list[np.ndarray]:
        return [*self.intermediates, self.y]


def make_sample(y: np.ndarray, r: int) -> SamplePair:
    levels = r.bit_length() - 1
    x = resample_array(y, r, "down")
    mids = [resample_array(y, r >> l, "down") for l in range(1, levels)]
    return SamplePair(y, x, mids)


def make_batch(dataset: Dataset, cfg: TrainConfig, iteration: int) -> list[SamplePair]:
    """Random crops for one iteration; a pure function of (cfg.seed, iteration)."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    rng = np.random.default_rng([cfg.seed, iteration])
    pairs = []
    for _ in range(cfg.batch):
        k = int(rng.integers(len(dataset)))
        img = dataset.images[k]
        if min(img.shape[-2:]) < cfg.crop:
            raise DataError(f"{dataset.names[k]}: {img.shape[-2]}x{img.shape[-1]} is smaller than crop {cfg.crop}")
        pairs.append(make_sample(crop_array(img, cfg.crop, rng).copy(), cfg.scale))
    return pairs


def _stack(pairs: list[SamplePair], dtype=np.float32) -> tuple[Tensor, list[Tensor]]:
    x = Tensor(np.stack([p.x for p in pairs]).astype(dtype))
    levels = len(pairs[0].targets())
    ys = [Tensor(np.stack([p.targets()[l] for p in pairs]).astype(dtype)) for l in range(levels)]
    return x, ys


def batches(dataset: Dataset, cfg: TrainConfig, start: int = 0) -> Iterator[list[SamplePair]]:
    """Batches for iterations start..cfg.iterations-1, optionally prepared ahead in a thread.

    Batch i depends only on (seed, i), so prefetching never changes what an
    iteration sees.
    """
    if cfg.prefetch <= 0:
        for i in range(start, cfg.iterations):
            yield make_batch(dataset, cfg, i)
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        ahead: deque = deque()
        nxt = start
        while nxt < cfg.iterations and len(ahead) < cfg.prefetch:
            ahead.append(pool.submit(make_batch, dataset, cfg, nxt))
            nxt += 1
        while ahead:
            fut = ahead.popleft()
            if nxt < cfg.iterations:
                ahead.append(pool.submit(make_batch, dataset, cfg, nxt))
                nxt += 1
            yield fut.result()


# ---------------------------------------------------------------- loop

@dataclass
class LogRecord:
    iteration: int
    loss: float
    lr: float

    def line(self) -> str:
        return f"{self.iteration}\t{self.loss:.9g}\t{self.lr:.9g}"


@dataclass
class TrainResult:
    model: DrnModel
    log: list[LogRecord]

    def moving_average(self, end: int, window: int = 100) -> float:
        """Mean loss over the ``window`` records ending at iteration ``end`` (inclusive)."""
        vals = [r.loss for r in self.log if end - window < r.iteration <= end]
        return float(np.mean(vals))


def training_loss(model: DrnModel, x: Tensor, ys: list[Tensor], cfg: TrainConfig) -> Tensor:
    out = model(x)
    kind = cfg.loss_kind()
    return loss_total(out.preds, out.duals, ys, out.inputs, kind, kind,
                      use_dual=model.use_dual, progressive=model.progressive)


def train_loop(model: DrnModel, dataset: Dataset, cfg: TrainConfig,
               reporter: Callable[[LogRecord], None] | None = None,
               out_dir=None) -> TrainResult:
    """Adam on every primal and dual parameter, one batch per iteration.

    With ``out_dir`` the run appends ``metrics.log`` records and writes
    ``final.drn`` (plus ``iter_<n>.drn`` every ``checkpoint_every`` steps).
    """
    out = Path(out_dir) if out_dir is not None else None
    logfile = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logfile = open(out / "metrics.log", "a", encoding="utf-8")
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    records: list[LogRecord] = []
    try:
        for it, pairs in enumerate(batches(dataset, cfg)):
            x, ys = _stack(pairs, params[0].dtype)
            model.zero_grad()
            loss = training_loss(model, x, ys, cfg)
            value = float(loss.data.reshape(()))
            backward(loss)
            if not math.isfinite(value):
                gmax = max((float(np.max(np.abs(p.grad))) for p in params if p.grad is not None), default=0.0)
                raise TrainingError(f"non-finite loss at iteration {it}: loss={value}, max |grad|={gmax}")
            state.lr = lr_at(cfg, it)
            adam_step(params, [p.grad for p in params], state)
            rec = LogRecord(it, value, state.lr)
            records.append(rec)
            if logfile is not None:
                logfile.write(rec.line() + "\n")
            if reporter is not None:
                reporter(rec)
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"iter_{it + 1}.drn")
    finally:
        if logfile is not None:
            logfile.close()
    if out is not None:
        save_checkpoint(model, out / "final.drn")
    return TrainResult(model, records)


def train(dataset: Dataset, cfg: TrainConfig, reporter=None, out_dir=None) -> TrainResult:
    model = init_model(cfg.scale, cfg.width, cfg.n_res, cfg.seed, cfg.use_dual, cfg.progressive)
    return train_loop(model, dataset, cfg, reporter, out_dir)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    gpsnr: float
    psnr_bicubic: float


@dataclass
class EvalReport:
    rows: list[EvalRow]

    @property
    def mean(self) -> EvalRow:
        cols = zip(*[(r.psnr, r.ssim, r.gpsnr, r.psnr_bicubic) for r in self.rows])
        return EvalRow("MEAN", *(float(np.mean(c)) for c in cols))

    def table(self) -> str:
        width = max(4, *(len(r.name) for r in self.rows))
        lines = [f"{'name':<{width}}  {'psnr':>9}  {'ssim':>7}  {'gpsnr':>9}  {'psnr_bicubic':>12}"]
        for r in [*self.rows, self.mean]:
            lines.append(f"{r.name:<{width}}  {r.psnr:9.4f}  {r.ssim:7.4f}  {r.gpsnr:9.4f}  {r.psnr_bicubic:12.4f}")
        return "\n".join(lines) + "\n"


def _as_dataset(images) -> Dataset:
    if isinstance(images, Dataset):
        return images
    return Dataset.from_dir(images)


def quantize8(v: np.ndarray) -> np.ndarray:
    return np.round(np.clip(v, 0.0, 1.0) * 255.0) / 255.0


def evaluate(model: DrnModel | None, images, scale: int, cfg: EvalConfig | None = None,
             quantize: bool = True) -> EvalReport:
    """Score the model's final-level output and the bicubic baseline on every image.

    HR images are cropped to multiples of ``scale`` before downsampling.
    With ``quantize`` the LR input and both outputs are rounded to 8 bits,
    as if stored as image files. ``model=None`` scores the bicubic baseline
    in both columns.
    """
    ds = _as_dataset(images)
    cfg = cfg if cfg is not None else EvalConfig(shave=scale)
    q = quantize8 if quantize else (lambda v: v)
    rows = []
    for name, hr in zip(ds.names, ds.images):
        hr = crop_to_multiple(hr, scale)
        lr = q(resample_array(hr, scale, "down"))
        bic = q(resample_array(lr, scale, "up"))
        sr = bic if model is None else q(upscale(model, lr))
        rows.append(EvalRow(name, psnr(hr, sr, cfg), ssim(hr, sr, cfg), gradient_psnr(hr, sr, cfg),
                            psnr(hr, bic, cfg)))
    return EvalReport(rows)


# ---------------------------------------------------------------- ablation

ABLATION_CELLS = {
    "plain": dict(use_dual=False, progressive=False),
    "dual": dict(use_dual=True, progressive=False),
    "progressive": dict(use_dual=False, progressive=True),
    "dual+progressive": dict(use_dual=True, progressive=True),
}


@dataclass
class AblationCell:
    name: str
    use_dual: bool
    progressive: bool
    psnr: float
    final_loss: float


@dataclass
class AblationReport:
    cells: list[AblationCell]

    def table(self) -> str:
        lines = [f"{'cell':<18}  {'dual':>5}  {'progressive':>11}  {'psnr':>9}  {'final_loss':>11}"]
        for c in self.cells:
            lines.append(f"{c.name:<18}  {str(c.use_dual):>5}  {str(c.progressive):>11}  "
                         f"{c.psnr:9.4f}  {c.final_loss:11.6g}")
        return "\n".join(lines) + "\n"

    def __getitem__(self, name: str) -> AblationCell:
        return next(c for c in self.cells if c.name == name)


def ablate(dataset: Dataset, cfg: TrainConfig, eval_images, eval_cfg: EvalConfig | None = None,
           reporter=None) -> AblationReport:
    """Train the four plain/dual/progressive/dual+progressive models with identical seeds."""
    cells = []
    for name, flags in ABLATION_CELLS.items():
        cell_cfg = replace(cfg, **flags)
        result = train(dataset, cell_cfg, reporter=reporter)
        rep = evaluate(result.model, eval_images, cfg.scale, eval_cfg)
        final = result.moving_average(cfg.iterations - 1, min(100, cfg.iterations))
        cells.append(AblationCell(name, flags["use_dual"], flags["progressive"], rep.mean.psnr, final))
        log.info("ablation cell %s: psnr %.4f", name, rep.mean.psnr)
    return AblationReport(cells)
