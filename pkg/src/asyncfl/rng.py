"""Deterministic RNG substreams derived from a single master seed.

Every source of randomness in a run (data generation, client timing, model
init, per-client batch sampling, per-client compressor draws) gets its own
counter-based Philox stream keyed by ``(master_seed, domain, index)``.  Any
single component can therefore be replayed in isolation, and two runs that
share a seed consume identical streams even when they differ in framework
or compressor.
"""

from __future__ import annotations

import numpy as np

# Domain tags. The (domain, index) pair is packed into the second Philox key
# word, so streams never collide across domains or client indices.
DATA = 1
TIMING = 2
INIT = 3
BATCH = 4
COMPRESS = 5
PROBE = 6

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


def substream(master_seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (master_seed, domain, index)."""
    if master_seed < 0:
        raise ValueError("master_seed must be nonnegative")
    key = np.array(
        [master_seed & _MASK64, ((domain & _MASK32) << 32) | (index & _MASK32)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
