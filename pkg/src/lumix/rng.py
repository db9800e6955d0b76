"""Deterministic random streams derived from a single 64-bit seed.

Every source of randomness in the project (scene geometry, weight init,
training noise, sampling noise) pulls from its own child stream so that
any one stage is reproducible in isolation. Children are keyed by a label
path hashed into a Philox counter-based generator; sibling streams never
overlap.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_rng(seed: int, *labels: str) -> np.random.Generator:
    """Return the generator for the stream named by ``labels`` under ``seed``."""
    text = str(int(seed)) + "\x1f" + "\x1f".join(labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed: int, *labels: str) -> int:
    """Derive a 63-bit integer seed for handing to APIs that want one number."""
    text = str(int(seed)) + "\x1f" + "\x1f".join(labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[16:24], "little") >> 1
