"""Splittable counter-based random streams (Philox behind a SeedSequence)."""
from __future__ import annotations

import numpy as np


class RngStream:
    """A Philox generator that can be split into independent children.

    Streams are cheap to clone: ``clone()`` replays the same sequence, which is
    how common random numbers are shared between perturbed evaluations.
    """

    def __init__(self, seed: int | None = 0, *, seq: np.random.SeedSequence | None = None):
        if seq is None:
            seq = np.random.SeedSequence(seed)
        self.seq = seq
        self.gen = np.random.Generator(np.random.Philox(seq))

    def split(self, n: int) -> list["RngStream"]:
        return [RngStream(seq=s) for s in self.seq.spawn(n)]

    def child(self) -> "RngStream":
        return self.split(1)[0]

    def clone(self) -> "RngStream":
        seq = np.random.SeedSequence(self.seq.entropy, spawn_key=self.seq.spawn_key)
        return RngStream(seq=seq)

    @property
    def lineage(self) -> dict:
        return {"entropy": int(self.seq.entropy), "spawn_key": list(self.seq.spawn_key)}

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self, size=None):
        return self.gen.random(size)

    def exponential(self, size=None):
        return self.gen.standard_exponential(size)


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(rng)
