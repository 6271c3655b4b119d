"""Seed plumbing: named, splittable substreams from one run seed.

Every random consumer (init, shuffling, noise, data generation, Monte
Carlo) derives its own counter-based generator from the run seed plus a
stream name, so adding a consumer never perturbs the draws seen by the
others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *names: str) -> np.random.Generator:
    """Return a Philox generator for the substream identified by `names`.

    The mapping (seed, names) -> stream is stable across processes and
    platforms: the name path is hashed with SHA-256 into the Philox key.
    """
    digest = hashlib.sha256(("/".join(names)).encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key ^ (int(seed) & (2**64 - 1))))
