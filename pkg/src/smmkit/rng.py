"""Seedable, counter-based random streams.

Every sampler accepts either an :class:`RngState` (a pure description of a
stream, so repeated calls reproduce the same draws) or a live
``numpy.random.Generator`` (consumed statefully).
"""

from dataclasses import dataclass

import numpy as np

_U53 = 2.0 ** -53


@dataclass(frozen=True)
class RngState:
    """A Philox stream identified by ``seed`` and a jump-ahead counter.

    Streams with the same seed and distinct ``stream`` values are separated by
    ``2**128`` draws, so shards generated in parallel never overlap.
    """

    seed: int
    stream: int = 0

    def generator(self):
        bitgen = np.random.Philox(self.seed)
        if self.stream:
            bitgen = bitgen.jumped(self.stream)
        return np.random.Generator(bitgen)

    def jump(self, n=1):
        return RngState(self.seed, self.stream + n)

    def child(self, index):
        """Independent sub-stream ``index`` (used for replications and grid cells)."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream, int(index)])
        return RngState(int(ss.generate_state(1, dtype=np.uint64)[0]), 0)


def as_generator(rng):
    """Return a ``numpy.random.Generator`` for ``rng``.

    Accepts an :class:`RngState`, a ``Generator``, an integer seed or None.
    """
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.Generator(np.random.Philox(rng))
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def open_uniform(gen, size):
    """Uniform draws on the open interval (0, 1) with 53-bit resolution."""
    k = gen.integers(0, 2 ** 53, size=size, dtype=np.int64)
    return (k + 0.5) * _U53
