"""Named, order-independent random sub-streams derived from one root seed."""

import hashlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(root_seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root_seed), spawn_key=tuple(_key_int(k) for k in keys))


def substream(root_seed: int, *keys) -> np.random.Generator:
    """Generator for the stream named by ``keys`` under ``root_seed``.

    Streams with different keys are statistically independent, and adding a
    new stream never perturbs existing ones.
    """
    return np.random.default_rng(seed_sequence(root_seed, *keys))


def derive_seed(root_seed: int, *keys) -> int:
    """A plain integer seed for the named stream (for specs that store an int)."""
    return int(seed_sequence(root_seed, *keys).generate_state(1, dtype=np.uint32)[0])
