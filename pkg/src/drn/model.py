"""Progressive dual reconstruction network and its checkpoint format.

A model with scale ``r = 2**L`` chains L blocks. Block ``l`` maps a
3-channel image to one of twice the size (primal) and maps that prediction
back down by two (dual)::

    primal: conv3x3(3->F) -> n_res x [conv3x3 -> ReLU -> conv3x3 + skip]
            -> conv3x3(F->4F) -> pixel_shuffle(2) -> conv3x3(F->3)
            + bicubic 2x upsampling of the block input
    dual:   conv3x3(3->F, stride 2) -> ReLU -> conv3x3(F->3)
            + bicubic 2x downsampling of the block output

Checkpoint layout (all integers u32 little-endian)::

    b"DRN1" | r | F | n_res | flags | count |
    count x (name_len | name utf-8 | rank | dims... | float32 LE values)

``flags`` bit 0 is ``use_dual``, bit 1 is ``progressive``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, FormatError
from .imaging import resample_matrix
from .tensor import Tensor, add, conv2d, kaiming_normal, pixel_shuffle, relu, separable_resample

MAGIC = b"DRN1"
HEADER_BYTES = len(MAGIC) + 5 * 4
MAX_RANK = 8
MAX_ELEMENTS = 1 << 28
EXIT_INIT_SCALE = 0.01  # last conv of each branch starts small so the branch starts near bicubic


@dataclass
class DrnOutput:
    preds: list[Tensor]                 # level 1..L predictions
    duals: list[Tensor | None]          # D_l(P_l(input_l)), None without the dual branch
    inputs: list[Tensor]                # block inputs, level 0..L-1


@dataclass
class DrnModel:
    scale: int
    width: int = 64
    n_res: int = 7
    use_dual: bool = True
    progressive: bool = True
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def levels(self) -> int:
        return self.scale.bit_length() - 1

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def primal_parameters(self) -> list[Tensor]:
        return [p for k, p in self.params.items() if k.startswith("primal")]

    def dual_parameters(self) -> list[Tensor]:
        return [p for k, p in self.params.items() if k.startswith("dual")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "DrnModel":
        """Copy with parameters cast to ``dtype`` (float64 for gradient checks)."""
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()}
        return DrnModel(self.scale, self.width, self.n_res, self.use_dual, self.progressive, params)

    def __call__(self, x: Tensor) -> DrnOutput:
        return drn_forward(self, x)


def _check_scale(r: int) -> int:
    if not isinstance(r, (int, np.integer)) or r < 2 or r & (r - 1):
        raise ContractError(f"scale must be a power of two >= 2, got {r!r}")
    return int(r)


def _conv_shapes(levels: int, width: int, n_res: int) -> list[tuple[str, tuple[int, int, int, int]]]:
    shapes = []
    for l in range(1, levels + 1):
        p = f"primal{l}"
        shapes.append((f"{p}.entry", (width, 3, 3, 3)))
        for k in range(n_res):
            shapes.append((f"{p}.res{k}.conv1", (width, width, 3, 3)))
            shapes.append((f"{p}.res{k}.conv2", (width, width, 3, 3)))
        shapes.append((f"{p}.expand", (4 * width, width, 3, 3)))
        shapes.append((f"{p}.exit", (3, width, 3, 3)))
        shapes.append((f"dual{l}.conv1", (width, 3, 3, 3)))
        shapes.append((f"dual{l}.conv2", (3, width, 3, 3)))
    return shapes


def parameter_count(scale: int, width: int, n_res: int) -> int:
    """Number of scalar parameters, from the layer list alone."""
    levels = _check_scale(scale).bit_length() - 1
    per_block = (
        (27 * width + width)                          # entry 3->F
        + n_res * 2 * (9 * width * width + width)     # residual convs
        + (36 * width * width + 4 * width)            # expand F->4F
        + (27 * width + 3)                            # exit F->3
        + (27 * width + width) + (27 * width + 3)     # dual convs
    )
    return levels * per_block


def init_model(scale: int, width: int = 64, n_res: int = 7, seed: int = 0,
               use_dual: bool = True, progressive: bool = True, dtype=np.float32) -> DrnModel:
    """Fresh model with fan-in scaled normal conv weights and zero biases."""
    r = _check_scale(scale)
    if r not in (2, 4, 8):
        raise ContractError(f"scale must be one of 2, 4, 8, got {r}")
    if width < 1 or n_res < 0:
        raise ContractError("width must be >= 1 and n_res >= 0")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in _conv_shapes(r.bit_length() - 1, width, n_res):
        w = kaiming_normal(rng, shape, dtype)
        if name.endswith((".exit", ".conv2")) and name.startswith(("primal", "dual")) and ".res" not in name:
            w *= dtype(EXIT_INIT_SCALE)
        params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(shape[0], dtype=dtype), requires_grad=True)
    return DrnModel(r, width, n_res, use_dual, progressive, params)


def _conv(model: DrnModel, name: str, x: Tensor, stride: int = 1) -> Tensor:
    p = model.params
    return conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride=stride, pad=1)


@lru_cache(maxsize=64)
def _upsample_matrix(n: int) -> np.ndarray:
    return resample_matrix(n, 2 * n, 2.0)


@lru_cache(maxsize=64)
def _downsample_matrix(n: int) -> np.ndarray:
    return resample_matrix(n, n // 2, 0.5)


def upsample2x(x: Tensor) -> Tensor:
    return separable_resample(x, _upsample_matrix(x.shape[2]), _upsample_matrix(x.shape[3]))


def downsample2x(y: Tensor) -> Tensor:
    return separable_resample(y, _downsample_matrix(y.shape[2]), _downsample_matrix(y.shape[3]))


def primal_block(model: DrnModel, level: int, x: Tensor, skip: bool = True) -> Tensor:
    name = f"primal{level}"
    h = _conv(model, f"{name}.entry", x)
    for k in range(model.n_res):
        t = relu(_conv(model, f"{name}.res{k}.conv1", h))
        h = add(h, _conv(model, f"{name}.res{k}.conv2", t))
    h = pixel_shuffle(_conv(model, f"{name}.expand", h), 2)
    out = _conv(model, f"{name}.exit", h)
    return add(out, upsample2x(x)) if skip else out


def dual_block(model: DrnModel, level: int, y: Tensor, skip: bool = True) -> Tensor:
    t = relu(_conv(model, f"dual{level}.conv1", y, stride=2))
    out = _conv(model, f"dual{level}.conv2", t)
    return add(out, downsample2x(y)) if skip else out


def drn_forward(model: DrnModel, x: Tensor) -> DrnOutput:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"drn_forward: expected N x 3 x h x w input, got {x.shape}")
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise DimensionError(f"drn_forward: input {x.shape[2]}x{x.shape[3]} too small, need at least 8x8")
    preds, duals, inputs = [], [], []
    cur = x
    for level in range(1, model.levels + 1):
        inputs.append(cur)
        out = primal_block(model, level, cur)
        preds.append(out)
        duals.append(dual_block(model, level, out) if model.use_dual else None)
        cur = out
    return DrnOutput(preds, duals, inputs)


def upscale(model: DrnModel, lr: np.ndarray) -> np.ndarray:
    """Final-level prediction for an (N, 3, h, w) or (3, h, w) array, clamped to [0, 1]."""
    single = lr.ndim == 3
    arr = lr[None] if single else lr
    dtype = next(iter(model.params.values())).dtype
    saved = {k: p.requires_grad for k, p in model.params.items()}
    for p in model.params.values():
        p.requires_grad = False
    try:
        x = Tensor(arr.astype(dtype))
        pred = primal_chain(model, x)
    finally:
        for k, p in model.params.items():
            p.requires_grad = saved[k]
    out = np.clip(pred.data.astype(np.float64), 0.0, 1.0)
    return out[0] if single else out


def primal_chain(model: DrnModel, x: Tensor) -> Tensor:
    cur = x
    for level in range(1, model.levels + 1):
        cur = primal_block(model, level, cur)
    return cur


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: DrnModel, path) -> None:
    flags = (1 if model.use_dual else 0) | (2 if model.progressive else 0)
    chunks = [MAGIC, struct.pack("<5I", model.scale, model.width, model.n_res, flags, len(model.params))]
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> DrnModel:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a DRN1 checkpoint", 0)
    scale, width, n_res, flags, count = (rd.u32(f) for f in ("scale", "width", "n_res", "flags", "count"))
    try:
        _check_scale(scale)
    except ContractError as exc:
        raise FormatError(str(exc), 4) from None
    params: dict[str, Tensor] = {}
    for _ in range(count):
        start = rd.pos
        n = rd.u32("name length")
        try:
            name = rd.take(n, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", start + 4) from None
        rank_at = rd.pos
        rank = rd.u32("rank")
        if rank > MAX_RANK:
            raise FormatError(f"rank {rank} of {name!r} exceeds {MAX_RANK}", rank_at)
        dims = [rd.u32("dims") for _ in range(rank)]
        numel = math.prod(dims)  # exact; an int64 product can wrap
        if numel > MAX_ELEMENTS:
            raise FormatError(f"dims {dims} of {name!r} overflow the element limit", rank_at)
        data = np.frombuffer(rd.take(4 * numel, f"values of {name!r}"), dtype="<f4").reshape(dims)
        params[name] = Tensor(data.astype(np.float32), requires_grad=True)
    if rd.pos != len(rd.buf):
        raise FormatError("trailing bytes after last parameter", rd.pos)
    model = DrnModel(scale, width, n_res, bool(flags & 1), bool(flags & 2), params)
    expected = {f"{name}.{part}" for name, _ in _conv_shapes(model.levels, width, n_res) for part in ("weight", "bias")}
    if set(params) != expected:
        missing = sorted(expected - set(params))[:3]
        raise FormatError(f"parameter set does not match header (missing e.g. {missing})", HEADER_BYTES)
    return model
