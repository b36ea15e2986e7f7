"""Counter-based random streams keyed by (master seed, path, channel, ...)."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox generator for the key tuple ``(seed, *keys)``.

    The stream for a given key does not depend on how many other streams
    exist or in which order they are consumed.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


class ChunkedDraws:
    """Pre-draw per-stream variates in blocks of steps.

    Draws are consumed in stream order, so the values seen at step ``k``
    are identical to drawing the whole horizon at once.
    """

    def __init__(self, generators, kind: str, total: int, chunk: int = 256):
        self.generators = list(generators)
        self.kind = kind
        self.total = total
        self.chunk = chunk
        self._buf = None
        self._start = 0
        self._stop = 0

    def _draw(self, g, size):
        if self.kind == "uniform":
            return g.random(size)
        return g.standard_normal(size)

    def __getitem__(self, k: int) -> np.ndarray:
        if not (self._start <= k < self._stop):
            if k != self._stop:
                raise IndexError("draws must be consumed sequentially")
            size = min(self.chunk, self.total - k)
            self._buf = np.stack([self._draw(g, size) for g in self.generators])
            self._start, self._stop = k, k + size
        return self._buf[:, k - self._start]
