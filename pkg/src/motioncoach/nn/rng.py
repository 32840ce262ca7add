"""Seeded randomness with named, independent substreams.

Every consumer derives its own counter-based (Philox) stream from a master
seed and a string name, so dataset forging and training are bit-reproducible
and safe to parallelize record-by-record.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import default_dtype


def substream(master_seed: int, name: str) -> np.random.Generator:
    """A Philox generator keyed by (master_seed, name); independent per name."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


class RngHub:
    """Hands out fresh named substreams derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def stream(self, name: str) -> np.random.Generator:
        return substream(self.master_seed, name)


def sample_gaussian(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal draws in the current default precision."""
    return rng.standard_normal(size=tuple(shape), dtype=default_dtype())
