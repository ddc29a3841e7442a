"""Deterministic child random streams from a single user seed.

Streams are built on the counter-based Philox generator: the user seed is
the key, and (purpose, stream) select a disjoint 2^64-sized counter block.
Results are therefore independent of draw interleaving, which keeps
per-bag generation reproducible regardless of execution order.
"""

from __future__ import annotations

import numpy as np

# Purpose codes for named child streams.
ARCHETYPES = 0
BAG = 1
SPLIT = 2
INIT = 3
SHUFFLE = 4
GRADCHECK = 5
KMEANS = 6


def child_rng(seed: int, purpose: int, stream: int = 0) -> np.random.Generator:
    """Generator for the (purpose, stream) block of the seed's Philox space."""
    counter = [0, int(purpose), int(stream), 0]
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1),
                                                counter=counter))
