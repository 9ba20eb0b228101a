"""Image datasets: folders of PNG/PNM files or seeded synthetic textures."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .imaging import ImagePlane, load_image, save_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm", ".bmp")
EDGE_WIDTH = 0.7   # tanh edge scale, in pixels
WAVE_GAIN = 2.0


@dataclass
class Dataset:
    names: list[str]
    images: list[np.ndarray]  # (3, H, W) float64 in [0, 1]

    def __len__(self):
        return len(self.images)

    @classmethod
    def from_dir(cls, path, strict: bool = False) -> "Dataset":
        """Load every readable image in ``path`` (sorted by name), as RGB.

        Unreadable files are skipped with a warning unless ``strict``.
        """
        root = Path(path)
        if not root.is_dir():
            raise DataError(f"{root}: not a directory")
        names, images = [], []
        for f in sorted(root.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                img = load_image(f)
            except OSError as exc:
                if strict:
                    raise DataError(str(exc)) from exc
                log.warning("skipping %s: %s", f, exc)
                continue
            v = img.values
            names.append(f.name)
            images.append(np.repeat(v, 3, axis=0) if v.shape[0] == 1 else v)
        if not images:
            raise DataError(f"{root}: no readable images")
        return cls(names, images)

    @classmethod
    def synthetic(cls, n: int, size: int, seed: int = 0) -> "Dataset":
        return cls([f"synth_{seed}_{i:04d}.png" for i in range(n)],
                   [synth_texture(size, (seed, i)) for i in range(n)])


def synth_texture(size: int, seed) -> np.ndarray:
    """Seeded RGB texture: soft step edges and discs over a flat base, plus oriented sinusoids.

    Edges have a tanh profile about one pixel wide, so the image carries no
    sub-pixel aliasing that a low-resolution copy could not predict.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    soft = lambda d: 0.5 * (1.0 + np.tanh(d * size / EDGE_WIDTH))  # noqa: E731
    img = np.empty((3, size, size))
    img[:] = rng.uniform(0.3, 0.7, size=3)[:, None, None]
    for _ in range(int(rng.integers(3, 7))):
        theta = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.4, 0.4)
        side = soft(np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5) - offset)
        img += side[None] * rng.uniform(-0.35, 0.35, size=3)[:, None, None]
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, 1, size=2)
        rad = rng.uniform(0.05, 0.25)
        disc = soft(rad - np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2))
        img += disc[None] * rng.uniform(-0.4, 0.4, size=3)[:, None, None]
    for _ in range(int(rng.integers(1, 4))):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(2.0, size / 8.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img += wave[None] * rng.uniform(0.02, 0.1) * WAVE_GAIN * rng.uniform(0.5, 1.0, size=3)[:, None, None]
    return np.clip(img, 0.0, 1.0)


def write_synthetic(out_dir, n: int, size: int, seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = Dataset.synthetic(n, size, seed)
    paths = []
    for name, arr in zip(ds.names, ds.images):
        p = out / name
        save_image(ImagePlane(arr), p)
        paths.append(p)
    return paths
