"""Data corruption harness: label flips, subsampling, test-set perturbation.

All operations are pure functions of (input, rng) and leave their inputs
untouched. Counts round half-up so e.g. 10% of 100 flips exactly 10 labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, perturb_dataset
from .errors import ConfigError
from .models import Dataset, ModelParams


@dataclass(frozen=True)
class CorruptionSpec:
    """How to corrupt a training set: flip fraction, subsample fraction, seed."""

    poison_fraction: float = 0.0
    subsample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.poison_fraction <= 1.0):
            raise ConfigError("poison_fraction must be in [0,1]")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise ConfigError("subsample_fraction must be in (0,1]")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def flip_labels(data: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Flip round(fraction*n) labels, each to a uniformly random other class."""
    if not (0.0 <= fraction <= 1.0):
        raise ConfigError("fraction must be in [0,1]")
    n = len(data)
    count = _round_half_up(fraction * n)
    if count == 0:
        return Dataset(data.X, data.y.copy(), data.num_classes)
    if data.num_classes < 2:
        raise ConfigError("cannot flip labels with a single class")
    idx = rng.choice(n, size=count, replace=False)
    y = data.y.copy()
    draw = rng.integers(0, data.num_classes - 1, size=count)
    y[idx] = draw + (draw >= y[idx])  # skip the original label
    return Dataset(data.X, y, data.num_classes)


def subsample(data: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Keep round(fraction*n) distinct examples, original order preserved."""
    if not (0.0 < fraction <= 1.0):
        raise ConfigError("fraction must be in (0,1]")
    n = len(data)
    size = max(1, _round_half_up(fraction * n))
    idx = np.sort(rng.choice(n, size=size, replace=False))
    return Dataset(data.X[idx], data.y[idx], data.num_classes)


def perturb_testset(
    data: Dataset,
    params: ModelParams,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> Dataset:
    """Replace every example by its PGD attack against the supplied model."""
    return perturb_dataset(data, params, cfg, rng)


def corrupt(data: Dataset, spec: CorruptionSpec, rng_sub, rng_flip) -> Dataset:
    """Subsample first, then flip labels on the kept examples."""
    out = data
    if spec.subsample_fraction < 1.0:
        out = subsample(out, spec.subsample_fraction, rng_sub)
    if spec.poison_fraction > 0.0:
        out = flip_labels(out, spec.poison_fraction, rng_flip)
    return out
