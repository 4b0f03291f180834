"""Deterministic random substreams keyed by (seed, stream kind, indices)."""

from __future__ import annotations

import numpy as np

SCENARIO_STREAM = 0
LIFETIME_STREAM = 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under the master ``seed``.

    The same ``(seed, key)`` always yields the same stream, whichever worker
    or in whatever order it is requested.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
