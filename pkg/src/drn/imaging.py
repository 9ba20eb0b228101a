"""Image planes, colour conversion, bicubic resampling, gradients and masks.

Images are channels-first float64 arrays in [0, 1]. Functions that take an
:class:`ImagePlane` also have array-level twins (``*_array``) that work on
any ``(..., H, W)`` stack, which is what the training pipeline uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError

RGB_TO_Y = np.array([65.481, 128.553, 24.966]) / 255.0
Y_OFFSET = 16.0 / 255.0


class ColorSpace(str, Enum):
    RGB = "rgb"
    LUMA = "luma"


@dataclass
class ImagePlane:
    values: np.ndarray  # (C, H, W)
    color_space: ColorSpace | None = None  # inferred from the channel count

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[0] not in (1, 3):
            raise DimensionError(f"ImagePlane needs (1|3, H, W) values, got {v.shape}")
        self.values = v
        if self.color_space is None:
            self.color_space = ColorSpace.RGB if v.shape[0] == 3 else ColorSpace.LUMA
        self.color_space = ColorSpace(self.color_space)
        if self.color_space is ColorSpace.RGB and v.shape[0] != 3:
            raise DimensionError(f"RGB plane must have 3 channels, got {v.shape[0]}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @classmethod
    def gray(cls, values) -> "ImagePlane":
        return cls(np.asarray(values, dtype=np.float64)[None], ColorSpace.LUMA)


@dataclass
class GradientFields:
    gx: np.ndarray
    gy: np.ndarray
    g: np.ndarray | None = None
    mask: np.ndarray | None = None


# ---------------------------------------------------------------- I/O

def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise OSError(f"{path}: not a binary PGM/PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise OSError(f"{path}: truncated PNM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace before raster
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise OSError(f"{path}: unsupported maxval {maxval} (only 8-bit is supported)")
    channels = 3 if raw[:2] == b"P6" else 1
    count = width * height * channels
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=pos) if len(raw) - pos >= count else None
    if data is None:
        raise OSError(f"{path}: truncated raster")
    return data.reshape(height, width, channels).transpose(2, 0, 1)


def _write_pnm(path: Path, samples: np.ndarray) -> None:
    c, h, w = samples.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode()
    path.write_bytes(header + np.ascontiguousarray(samples.transpose(1, 2, 0)).tobytes())


def load_image(path) -> ImagePlane:
    """Read an 8-bit grey or RGB PNG (via Pillow) or binary PGM/PPM."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
            samples = _read_pnm(path)
        else:
            from PIL import Image

            with Image.open(path) as im:
                if im.mode == "P":
                    im = im.convert("RGB")
                if im.mode not in ("L", "RGB"):
                    raise OSError(f"{path}: unsupported image mode {im.mode!r} (need 8-bit L or RGB)")
                arr = np.asarray(im, dtype=np.uint8)
            samples = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    except OSError as exc:
        if str(path) in str(exc):
            raise
        raise OSError(f"{path}: {exc}") from exc
    space = ColorSpace.RGB if samples.shape[0] == 3 else ColorSpace.LUMA
    return ImagePlane(samples.astype(np.float64) / 255.0, space)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def save_image(img: ImagePlane, path) -> None:
    path = Path(path)
    samples = to_uint8(img.values)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        _write_pnm(path, samples)
        return
    from PIL import Image

    arr = samples[0] if samples.shape[0] == 1 else samples.transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


# ---------------------------------------------------------------- colour

def rgb_to_y_array(rgb: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma of a (..., 3, H, W) stack in [0, 1]; keeps the channel axis."""
    y = np.tensordot(RGB_TO_Y, rgb, axes=([0], [-3])) + Y_OFFSET
    return np.clip(y, 0.0, 1.0)[..., None, :, :]


def rgb_to_y(img: ImagePlane) -> ImagePlane:
    if img.color_space is not ColorSpace.RGB or img.channels != 3:
        raise ContractError(f"rgb_to_y needs a 3-channel RGB plane, got {img.channels}-channel {img.color_space.value}")
    return ImagePlane(rgb_to_y_array(img.values), ColorSpace.LUMA)


# ---------------------------------------------------------------- resampling

def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def contributions(in_len: int, out_len: int, scale: float, antialias: bool = True):
    """Tap indices and weights of the cubic kernel for one axis.

    Output pixel ``k`` (0-based) is centred at input coordinate
    ``(k + 0.5) / scale - 0.5``. When shrinking, the kernel is stretched by
    ``1 / scale``. Indices outside the input are clamped to the edge.
    """
    if antialias and scale < 1:
        width = 4.0 / scale
        kernel = lambda d: scale * cubic(scale * d)  # noqa: E731
    else:
        width = 4.0
        kernel = cubic
    centre = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centre - width / 2).astype(np.int64) + 1
    taps = int(math.ceil(width)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(centre[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, in_len - 1), weights


def _resize_axis(arr: np.ndarray, axis: int, out_len: int, scale: float) -> np.ndarray:
    idx, w = contributions(arr.shape[axis], out_len, scale)
    moved = np.moveaxis(arr, axis, -1)
    out = np.einsum("...ok,ok->...o", moved[..., idx], w)
    return np.moveaxis(out, -1, axis)


def resample_matrix(in_len: int, out_len: int, scale: float) -> np.ndarray:
    """Dense (out_len, in_len) matrix of the same kernel, for use inside the autodiff graph."""
    idx, w = contributions(in_len, out_len, scale)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), idx.shape[1]), idx.ravel()), w.ravel())
    return mat


def _scale_value(scale) -> Fraction:
    s = Fraction(scale).limit_denominator(1000) if not isinstance(scale, Fraction) else scale
    if s <= 0:
        raise ContractError(f"scale must be positive, got {scale}")
    return s


def resample_array(arr: np.ndarray, scale, direction: str = "down") -> np.ndarray:
    """Bicubic resize of the last two axes by ``scale`` in ``direction``; clamps to [0, 1]."""
    s = _scale_value(scale)
    h, w = arr.shape[-2:]
    if direction == "down":
        if s.denominator == 1:
            r = s.numerator
            if h % r or w % r:
                raise DimensionError(f"cannot downsample {h}x{w} by {r}: dims (axes -2, -1) not divisible")
            oh, ow = h // r, w // r
        else:
            oh, ow = math.ceil(h / s), math.ceil(w / s)
        factor = 1 / s
    elif direction == "up":
        oh, ow = math.ceil(h * s), math.ceil(w * s)
        factor = s
    else:
        raise ContractError(f"direction must be 'down' or 'up', got {direction!r}")
    out = _resize_axis(np.asarray(arr, dtype=np.float64), -2, oh, float(factor))
    out = _resize_axis(out, -1, ow, float(factor))
    return np.clip(out, 0.0, 1.0)


def bicubic_resample(img: ImagePlane, scale, direction: str = "down") -> ImagePlane:
    return ImagePlane(resample_array(img.values, scale, direction), img.color_space)


# ---------------------------------------------------------------- gradients

def forward_diff(arr: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(arr, dtype=np.float64)
    n = arr.shape[axis]
    hi = [slice(None)] * arr.ndim
    lo = [slice(None)] * arr.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    out[tuple(lo)] = arr[tuple(hi)] - arr[tuple(lo)]
    return out


def gradient_magnitude(arr: np.ndarray) -> np.ndarray:
    gx = forward_diff(arr, -1)
    gy = forward_diff(arr, -2)
    return np.sqrt(gx * gx + gy * gy)


def image_gradient(img: ImagePlane) -> GradientFields:
    v = img.values
    return GradientFields(gx=forward_diff(v, -1), gy=forward_diff(v, -2))


def normalize_mask(g: np.ndarray) -> np.ndarray:
    """Min-max normalise one magnitude map; a constant map gives all zeros."""
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.zeros_like(g)
    return (g - lo) / (hi - lo)


def mask_array(batch: np.ndarray) -> np.ndarray:
    """Gradient mask for an (N, C, H, W) batch of reference images.

    Three-channel images use their luma magnitude; the mask is repeated
    over channels. Normalisation is per image.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n, c = batch.shape[:2]
    ref = rgb_to_y_array(batch) if c == 3 else batch
    g = gradient_magnitude(ref)
    masks = np.stack([normalize_mask(g[i]) for i in range(n)])
    if masks.shape[1] != c:
        masks = np.repeat(masks, c, axis=1)
    return masks


def build_mask(img: ImagePlane) -> GradientFields:
    """Gradient fields, magnitude and normalised mask of a ground-truth image."""
    v = img.values
    ref = rgb_to_y_array(v) if img.channels == 3 else v
    gx, gy = forward_diff(ref, -1), forward_diff(ref, -2)
    g = np.sqrt(gx * gx + gy * gy)
    mask = normalize_mask(g)
    if img.channels == 3:
        mask = np.repeat(mask, 3, axis=0)
    return GradientFields(gx=gx, gy=gy, g=g, mask=mask)


# ---------------------------------------------------------------- crops

def crop_array(arr: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = arr.shape[-2:]
    if h < size or w < size:
        raise DimensionError(f"cannot crop {size}x{size} from {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return arr[..., top:top + size, left:left + size]


def crop_random(img: ImagePlane, size: int, seed) -> ImagePlane:
    rng = np.random.default_rng(seed)
    return ImagePlane(crop_array(img.values, size, rng).copy(), img.color_space)


def crop_to_multiple(arr: np.ndarray, r: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    return arr[..., : h - h % r, : w - w % r]
