"""Seeded synthetic image generators and image file IO.

Three families with very different statistics:

* ``natural_like``: smooth color fields, soft blobs, and band-limited
  texture; the stand-in training distribution for the base codec.
* ``pixel_art``: hard-edged block mosaics from small palettes.
* ``vector_art``: flat-color shape compositions with crisp boundaries.

The last two are deliberately far from the first, so per-image adaptation
has real headroom. Generators are pure functions of their seed.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .codec import ImageTensor
from .errors import ContractError


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _normalize(img: np.ndarray, lo: float = 0.02, hi: float = 0.98) -> np.ndarray:
    mn, mx = float(img.min()), float(img.max())
    if mx - mn < 1e-9:
        return np.full_like(img, (lo + hi) / 2.0)
    return lo + (hi - lo) * (img - mn) / (mx - mn)


def natural_like(count: int, size: int = 128, seed: int = 0) -> list[ImageTensor]:
    """Smooth, texture-bearing images resembling downscaled photographs."""
    if count < 1 or size < 16:
        raise ContractError("need count >= 1 and size >= 16")
    images = []
    for i in range(count):
        rng = _rng(seed, i)
        img = np.zeros((size, size, 3), dtype=np.float64)
        # large-scale color fields from upsampled coarse grids
        for cells in (4, 8):
            coarse = rng.normal(0.0, 1.0, (cells, cells, 3))
            img += zoom(coarse, (size / cells, size / cells, 1), order=1)
        # directional ramp
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:size, 0:size] / size
        ramp = np.cos(theta) * xx + np.sin(theta) * yy
        img += ramp[:, :, None] * rng.normal(0.0, 0.8, 3)
        # soft elliptical objects
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.2, 0.8, 2) * size
            ry, rx = rng.uniform(0.08, 0.3, 2) * size
            bump = np.exp(-(((yy * size - cy) / ry) ** 2 + ((xx * size - cx) / rx) ** 2))
            img += bump[:, :, None] * rng.normal(0.0, 0.9, 3)
        # band-limited texture, correlated across channels
        tex = gaussian_filter(rng.normal(0.0, 1.0, (size, size)), rng.uniform(1.0, 2.5))
        img += tex[:, :, None] * rng.uniform(0.2, 0.5) * rng.uniform(0.5, 1.0, 3)
        images.append(ImageTensor(_normalize(img).astype(np.float32)))
    return images


def pixel_art(count: int, size: int = 64, seed: int = 0) -> list[ImageTensor]:
    """Blocky sprite-like mosaics: few colors, axis-aligned edges."""
    if count < 1 or size < 16:
        raise ContractError("need count >= 1 and size >= 16")
    images = []
    for i in range(count):
        rng = _rng(seed, i)
        block = int(rng.choice([4, 8]))
        grid = size // block
        ncol = int(rng.integers(3, 7))
        palette = rng.uniform(0.0, 1.0, (ncol, 3))
        palette[0] = rng.uniform(0.0, 0.35, 3)  # dark background
        canvas = np.zeros((grid, grid), dtype=np.int64)
        for _ in range(int(rng.integers(5, 12))):
            y0, x0 = rng.integers(0, grid, 2)
            h = int(rng.integers(1, max(2, grid // 2)))
            w = int(rng.integers(1, max(2, grid // 2)))
            canvas[y0:y0 + h, x0:x0 + w] = rng.integers(1, ncol)
        # sprinkle isolated pixels and a few scanlines
        for _ in range(int(rng.integers(6, 20))):
            canvas[rng.integers(0, grid), rng.integers(0, grid)] = rng.integers(0, ncol)
        if rng.random() < 0.4:
            row = int(rng.integers(0, grid))
            canvas[row, ::2] = rng.integers(0, ncol)
        img = palette[canvas]
        img = np.kron(img, np.ones((block, block, 1)))[:size, :size]
        images.append(ImageTensor(np.ascontiguousarray(img, dtype=np.float32)))
    return images


def vector_art(count: int, size: int = 64, seed: int = 0) -> list[ImageTensor]:
    """Flat-color compositions: filled circles, rectangles, and stripes."""
    if count < 1 or size < 16:
        raise ContractError("need count >= 1 and size >= 16")
    images = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(count):
        rng = _rng(seed, i)
        img = np.tile(rng.uniform(0.1, 0.9, 3), (size, size, 1))
        for _ in range(int(rng.integers(3, 9))):
            color = rng.uniform(0.0, 1.0, 3)
            kind = rng.integers(0, 3)
            if kind == 0:  # circle
                cy, cx = rng.uniform(0.1, 0.9, 2) * size
                r = rng.uniform(0.08, 0.35) * size
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
            elif kind == 1:  # rotated half-plane strip
                theta = rng.uniform(0, np.pi)
                proj = np.cos(theta) * xx + np.sin(theta) * yy
                c = rng.uniform(proj.min(), proj.max())
                w = rng.uniform(0.05, 0.25) * size
                mask = np.abs(proj - c) <= w
            else:  # rectangle
                y0, x0 = (rng.uniform(0.0, 0.7, 2) * size).astype(int)
                h = int(rng.uniform(0.1, 0.5) * size)
                w = int(rng.uniform(0.1, 0.5) * size)
                mask = np.zeros((size, size), dtype=bool)
                mask[y0:y0 + h, x0:x0 + w] = True
            img[mask] = color
        images.append(ImageTensor(np.ascontiguousarray(img, dtype=np.float32)))
    return images


GENERATORS = {
    "natural": natural_like,
    "pixel": pixel_art,
    "vector": vector_art,
}


def save_image(image: ImageTensor, path: str) -> None:
    from PIL import Image
    Image.fromarray(image.to_uint8()).save(path)


def load_image(path: str) -> ImageTensor:
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageTensor.from_uint8(arr)


def load_directory(path: str) -> list[ImageTensor]:
    """All images in a directory, sorted by file name."""
    names = sorted(n for n in os.listdir(path)
                   if n.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")))
    if not names:
        raise ContractError(f"no images found in {path}")
    return [load_image(os.path.join(path, n)) for n in names]
