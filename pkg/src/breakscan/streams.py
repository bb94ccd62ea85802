"""Reproducible, splittable random streams.

A stream is keyed by ``(master_seed, purpose, index...)``: the same key always
yields the same ``numpy.random.Generator`` and distinct keys are statistically
independent (``SeedSequence`` spawn keys), so replicate ``r`` of an experiment
can be regenerated in isolation and any number of workers can share one seed.
"""

from __future__ import annotations

import os
import secrets

import numpy as np

# Purpose tags keep streams for different jobs disjoint under one seed.
SAMPLE = 0
REPLICATE = 1
TABLE_PATH = 2
TABLE_CHI = 3
MOMENT = 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed() -> int:
    """Entropy-derived seed for runs where the user did not pick one."""
    return secrets.randbits(63)


def default_workers() -> int:
    env = os.environ.get("BREAKSCAN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def chunk_ranges(n: int, workers: int, min_chunk: int = 1) -> list[range]:
    """Split ``range(n)`` into at most ``workers`` contiguous ranges."""
    workers = max(1, min(workers, n // max(min_chunk, 1) or 1))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
