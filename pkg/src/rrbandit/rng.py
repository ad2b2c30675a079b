"""Seeded stream management.

All randomness flows through counter-based Philox generators keyed by an
integer path ``(root_seed, *branch)``.  Two consumers with different paths
never share a stream, and the same path always reproduces the same draws,
including across process restarts and worker pools.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for the given seed path."""
    key = [int(seed)] + [int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
