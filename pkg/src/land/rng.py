"""Counter-based random streams for reproducible Monte Carlo.

Each (seed, event, index) triple addresses an independent Philox stream, so
sample s of Monte Carlo event e is the same bit pattern no matter how many
samples are drawn, in what order, or on how many threads. Fit loops assign
one event number per estimation step, which makes whole runs replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class McStream:
    """Address of a family of per-sample streams."""

    seed: int
    event: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.event < 0:
            raise ValueError("seed and event must be non-negative")


def as_stream(rng):
    """Coerce an int seed or McStream to McStream."""
    if isinstance(rng, McStream):
        return rng
    return McStream(seed=int(rng))


def sample_stream(seed, event, index):
    """Generator for one (event, sample) pair."""
    return np.random.Generator(
        np.random.Philox(key=seed, counter=[0, index, event, 0])
    )


def standard_normals(seed, event, n, dim):
    """(n, dim) standard normals, one counter stream per row."""
    out = np.empty((n, dim))
    for i in range(n):
        out[i] = sample_stream(seed, event, i).standard_normal(dim)
    return out
