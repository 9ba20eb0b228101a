"""PSNR, SSIM and gradient-magnitude PSNR under the usual SR scoring convention.

By default images are scored on BT.601 luma with ``shave`` border pixels
removed on every side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError, DimensionError
from .imaging import ImagePlane, gradient_magnitude, rgb_to_y_array

PSNR_INF = math.inf
"""Returned when the two images are identical; never produced by dividing by zero."""

GRADIENT_PEAK = math.sqrt(2.0)


class ChannelMode(str, Enum):
    LUMA = "luma"
    RGB = "rgb"


@dataclass(frozen=True)
class EvalConfig:
    channel_mode: ChannelMode = ChannelMode.LUMA
    shave: int = 0
    peak: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "channel_mode", ChannelMode(self.channel_mode))
        if self.shave < 0:
            raise ContractError(f"shave must be >= 0, got {self.shave}")
        if self.peak <= 0:
            raise ContractError("peak must be positive")


def _values(img) -> np.ndarray:
    v = img.values if isinstance(img, ImagePlane) else np.asarray(img, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    return v


def prepare(img, cfg: EvalConfig) -> np.ndarray:
    """Channel conversion then border shave; returns (C, H, W)."""
    v = _values(img)
    if cfg.channel_mode is ChannelMode.LUMA and v.shape[0] == 3:
        v = rgb_to_y_array(v)
    s = cfg.shave
    if s:
        h, w = v.shape[-2:]
        if 2 * s >= min(h, w):
            raise ContractError(f"shave {s} leaves nothing of a {h}x{w} image")
        v = v[..., s:h - s, s:w - s]
    return v


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"image dims differ: {a.shape} vs {b.shape}")


def psnr_arrays(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    _check_pair(a, b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def psnr(a, b, cfg: EvalConfig = EvalConfig()) -> float:
    _check_pair(_values(a), _values(b))
    return psnr_arrays(prepare(a, cfg), prepare(b, cfg), cfg.peak)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the last two axes
    k = g.size
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[..., :, j:w - k + 1 + j] for j in range(k))


def ssim_map(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> np.ndarray:
    """Local SSIM over 11x11 Gaussian windows (sigma 1.5) for one channel."""
    if min(a.shape[-2:]) < 11:
        raise DimensionError(f"SSIM needs images of at least 11x11, got {a.shape[-2]}x{a.shape[-1]}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, cfg: EvalConfig = EvalConfig()) -> float:
    """Mean SSIM; in RGB mode, the mean of the per-channel values."""
    _check_pair(_values(a), _values(b))
    pa, pb = prepare(a, cfg), prepare(b, cfg)
    if np.array_equal(pa, pb):
        return 1.0
    vals = [float(np.mean(ssim_map(pa[c], pb[c], cfg.peak))) for c in range(pa.shape[0])]
    return float(np.mean(vals))


def gradient_psnr(a, b, cfg: EvalConfig = EvalConfig()) -> float:
    """PSNR between gradient-magnitude maps, peak sqrt(2)."""
    va, vb = _values(a), _values(b)
    _check_pair(va, vb)
    unshaved = EvalConfig(cfg.channel_mode, 0, cfg.peak)
    ga = gradient_magnitude(prepare(va, unshaved))
    gb = gradient_magnitude(prepare(vb, unshaved))
    s = cfg.shave
    if s:
        h, w = ga.shape[-2:]
        ga, gb = ga[..., s:h - s, s:w - s], gb[..., s:h - s, s:w - s]
    return psnr_arrays(ga, gb, GRADIENT_PEAK)
