"""Reproducible random streams.

Every random draw in the package flows through a :class:`numpy.random.Generator`
backed by the counter-based Philox bit generator. A stream is identified by a
root seed plus an integer key path such as ``(TASK_EVAL, replicate, unit)``, so
a task's draws depend only on its own identity and never on which worker runs
it or in what order tasks complete.
"""

from __future__ import annotations

import numpy as np

# task-kind codes used as the first element of stream keys
SIMULATE = 1
FILTER = 2
EVAL = 3
PIF_FILTER = 4
PIF_PERTURB = 5
SEARCH = 6
START = 7
MARGINAL = 8
MARGINAL_EVAL = 9
PROFILE = 10

MASK64 = (1 << 64) - 1


def stream_key(*key: int) -> tuple[int, ...]:
    for k in key:
        if int(k) < 0:
            raise ValueError(f"stream key components must be non-negative, got {key}")
    return tuple(int(k) for k in key)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for stream ``key`` under root ``seed``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=stream_key(*key))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    if isinstance(rng_or_seed, tuple):
        return make_rng(*rng_or_seed)
    return make_rng(int(rng_or_seed))


def child_seed(seed: int, *key: int) -> int:
    """Derive a 63-bit integer seed for a nested task from ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=stream_key(*key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
