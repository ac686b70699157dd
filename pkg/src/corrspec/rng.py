"""Counter-derived random streams.

Every shot/trajectory ``i`` of a run seeded with ``seed`` draws from its own
Philox stream keyed by ``(seed, i)``, so results do not depend on how work is
split between threads.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *counter: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counter))
    return np.random.Generator(np.random.Philox(ss))


def uniforms(seed: int, indices, size: int, *prefix: int) -> np.ndarray:
    """``(len(indices), size)`` uniforms; row ``j`` comes from stream ``(seed, *prefix, indices[j])``."""
    indices = list(indices)
    out = np.empty((len(indices), size))
    for row, i in enumerate(indices):
        out[row] = stream(seed, *prefix, i).random(size)
    return out


def chunks(n: int, parts: int) -> list[range]:
    """Split ``range(n)`` into at most ``parts`` contiguous, ordered pieces."""
    parts = max(1, min(parts, n)) if n else 1
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(parts)]
