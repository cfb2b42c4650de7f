"""Counter-based random streams.

Every draw is keyed by ``(seed, stream path, counter)`` through
``numpy.random.SeedSequence`` feeding a Philox generator, so results do not
depend on the order in which ensemble blocks or time steps are evaluated.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")


def ordered_map(fn: Callable[..., T], items: Iterable, threads: int = 1) -> list[T]:
    """``[fn(x) for x in items]`` on a worker pool; result order follows ``items``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ensemble members are drawn in fixed-size blocks; each block owns a key
MEMBER_BLOCK = 64


def _tag(x) -> int:
    if isinstance(x, (int, np.integer)):
        if x < 0:
            raise ValueError("stream ids must be non-negative")
        return int(x)
    return zlib.crc32(str(x).encode())


@dataclass(frozen=True)
class NoiseStream:
    """A named substream of the root seed.

    Identical ``(seed, stream)`` pairs reproduce identical draws; different
    stream paths are statistically independent.
    """

    seed: int
    stream: tuple[int, ...] = ()
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def substream(self, *ids) -> "NoiseStream":
        return NoiseStream(self.seed, self.stream + tuple(_tag(i) for i in ids), self.enabled)

    def silenced(self) -> "NoiseStream":
        """Same stream with the noise switched off (all draws are zero)."""
        return NoiseStream(self.seed, self.stream, False)

    def substream_id(self, *counter) -> tuple[int, ...]:
        return (int(self.seed),) + self.stream + tuple(_tag(c) for c in counter)

    def generator(self, *counter) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream + tuple(_tag(c) for c in counter))
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, shape, *counter) -> np.ndarray:
        if not self.enabled:
            return np.zeros(shape)
        return self.generator(*counter).standard_normal(shape)

    def block_normal(self, first: int, count: int, shape, *counter) -> np.ndarray:
        """Standard normals of shape ``(count,) + shape`` for members ``first..first+count``.

        Member ``j`` always receives the same numbers regardless of how the
        range is split, because draws are made per fixed block of
        ``MEMBER_BLOCK`` members.
        """
        shape = tuple(shape)
        out = np.empty((count,) + shape)
        if not self.enabled:
            out[:] = 0.0
            return out
        j = first
        end = first + count
        while j < end:
            b = j // MEMBER_BLOCK
            lo = b * MEMBER_BLOCK
            draws = self.generator("block", b, *counter).standard_normal((MEMBER_BLOCK,) + shape)
            take_lo = j - lo
            take_hi = min(end, lo + MEMBER_BLOCK) - lo
            out[j - first:j - first + take_hi - take_lo] = draws[take_lo:take_hi]
            j = lo + take_hi
        return out
