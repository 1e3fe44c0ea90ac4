"""Seeded, named random streams.

Every randomized operation in the package draws from a numpy Generator built
here. Streams are split by (seed, *labels): the labels are hashed with crc32
into a SeedSequence spawn key, so e.g. ``stream(7, "flip")`` and
``stream(7, "subsample")`` are independent but individually reproducible
bit-for-bit across platforms (PCG64 is portable).

Stream names used by the library:

- ``("flip",)``            label flipping
- ``("subsample",)``       subsampling
- ``("attack", k)``        test-set / eval perturbation, k an integer tag
- ``("init",)``            parameter initialization
- ``("train",)``           batch shuffling and train-time attack starts
- ``("trial", i)``         per-trial streams in Monte Carlo experiments
- ``("grid", i)``          per-grid-point streams in sweeps
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Child generator for (seed, *labels), independent across label tuples."""
    key = tuple(_key_part(lab) for lab in labels)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
