"""Named random streams split from one 64-bit seed.

Each consumer (market sampling, each agent) draws from its own stream, so
adding a consumer never perturbs the others.
"""

import hashlib

import numpy as np


def stable_int(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), stable_int(name)]))
