"""Deterministic random streams for reproducible simulation.

Every random draw in the simulator comes from a stream keyed by
``(master_seed, purpose_tag, *indices)``, e.g. ``stream(seed,
"participation", round_index)``. Streams are backed by the counter-based
Philox generator, so results do not depend on call order across streams,
thread scheduling, or client iteration order.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_word(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def stream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return the generator for one (seed, purpose, indices...) stream key."""
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    entropy = [int(master_seed) & _MASK64, _tag_word(tag)]
    entropy.extend(int(i) & _MASK64 for i in indices)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
