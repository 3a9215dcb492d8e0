"""Stable named sub-seeds; no ambient entropy anywhere in the package."""

import hashlib

import numpy as np


def seed_sequence(key: str, seed: int) -> np.random.SeedSequence:
    digest = hashlib.sha256(f"{key}:{seed}".encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def rng_for(key: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(key, seed))
