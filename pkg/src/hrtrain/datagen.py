"""Synthetic data generators.

- ``make_blobs``: two Gaussian classes in a [0,1]^d box with a configurable
  center separation; exact, fast sampling for Monte Carlo trials on convex
  models.
- ``make_glyphs``: a procedural 28x28 ten-class digit-glyph corpus (5x7 LED
  segments, random shift/rotation/scale, blur, pixel noise). Stands in for
  handwritten-digit data on machines without the real IDX files while keeping
  the images nontrivial to fit at small sample sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .models import Dataset


@dataclass(frozen=True)
class BlobSpec:
    """Two Gaussian blobs: dimension, center separation, spread."""

    dim: int = 2
    separation: float = 0.3  # distance between class centers along the diagonal
    sigma: float = 0.12

    def __post_init__(self):
        if self.dim < 1 or self.sigma <= 0 or self.separation < 0:
            raise ConfigError("bad blob spec")


def make_blobs(spec: BlobSpec, n: int, rng: np.random.Generator) -> Dataset:
    """n samples, balanced-on-average binary labels, features clipped to [0,1]."""
    y = rng.integers(0, 2, size=n)
    offset = spec.separation / (2.0 * np.sqrt(spec.dim))
    centers = np.where(y[:, None] == 0, 0.5 - offset, 0.5 + offset)
    X = centers + spec.sigma * rng.standard_normal((n, spec.dim))
    return Dataset(np.clip(X, 0.0, 1.0), y, num_classes=2)


# 5x7 segment bitmaps for the digits 0-9.
_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00110 01000 10000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_array(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit].split()
    return np.array([[float(c) for c in row] for row in rows])


def make_glyphs(
    n: int,
    rng: np.random.Generator,
    noise: float = 0.25,
    jitter: float = 3.0,
    blur: float = 0.8,
) -> Dataset:
    """n noisy 28x28 digit-glyph images, labels uniform over 10 classes."""
    side = 28
    base = np.zeros((10, side, side))
    for k in range(10):
        g = _glyph_array(k)
        up = np.kron(g, np.ones((3, 3)))  # 21x15
        r0 = (side - up.shape[0]) // 2
        c0 = (side - up.shape[1]) // 2
        base[k, r0 : r0 + up.shape[0], c0 : c0 + up.shape[1]] = up

    y = rng.integers(0, 10, size=n)
    X = np.empty((n, side * side))
    center = (side - 1) / 2.0
    for i in range(n):
        img = base[y[i]]
        angle = rng.uniform(-12.0, 12.0) * np.pi / 180.0
        scale = rng.uniform(0.85, 1.15)
        shift = rng.uniform(-jitter, jitter, size=2)
        ca, sa = np.cos(angle) / scale, np.sin(angle) / scale
        mat = np.array([[ca, -sa], [sa, ca]])
        off = np.array([center, center]) - mat @ np.array([center, center]) - shift
        img = ndimage.affine_transform(img, mat, offset=off, order=1, mode="constant")
        if blur > 0:
            img = ndimage.gaussian_filter(img, blur)
        img = img + noise * rng.standard_normal((side, side))
        X[i] = np.clip(img, 0.0, 1.0).ravel()
    return Dataset(X, y, num_classes=10)
