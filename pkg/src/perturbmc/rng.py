"""Seeded, splittable random streams.

Every simulation in the package takes an :class:`RngStream` rather than a bare
generator so that replicate ensembles can be run with distinct ``stream_id``
values and still be reproduced bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A ``(seed, stream_id)`` pair naming one reproducible draw sequence.

    The stream is backed by numpy's ``SeedSequence`` spawning scheme, so
    distinct stream ids give statistically independent generators.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "RngStream":
        """Derive a child stream; used to hand independent streams to replicates."""
        mixed = ((self.stream_id * 0x9E3779B97F4A7C15 + index + 1) & _MASK64) ^ 0xD1B54A32D192ED03
        return RngStream(self.seed, mixed)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
