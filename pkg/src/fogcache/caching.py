"""Cache actions, the hit-rate reward, and the LRU/LFU replacement baselines.

A cache decision is a binary incidence vector over the content library with
exactly ``capacity`` ones.  Decisions are enumerated in lexicographic order
of their member sets, which gives every decision a canonical integer index;
``ActionSpace.rank`` and ``ActionSpace.unrank`` convert between the two
representations.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class CacheAction:
    """A cache decision: which contents are resident during a slot."""

    bits: np.ndarray
    index: int

    def members(self) -> np.ndarray:
        """Content ids cached by this action, ascending."""
        return np.flatnonzero(self.bits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CacheAction):
            return NotImplemented
        return self.index == other.index and len(self.bits) == len(other.bits)

    def __hash__(self) -> int:
        return hash((len(self.bits), self.index))

    def __repr__(self) -> str:
        return f"CacheAction(index={self.index}, members={self.members().tolist()})"


class ActionSpace:
    """All ways of filling a cache of ``capacity`` slots from ``library_size`` contents.

    The enumeration is total and duplicate-free: index 0 is the subset
    {0, .., capacity-1} and index ``size - 1`` is the subset of the
    ``capacity`` highest content ids.
    """

    def __init__(self, library_size: int, capacity: int):
        if library_size < 1:
            raise ValueError(f"library_size must be >= 1, got {library_size}")
        if not 1 <= capacity <= library_size:
            raise ValueError(
                f"capacity must be in [1, {library_size}], got {capacity}"
            )
        self.library_size = library_size
        self.capacity = capacity
        self.size = math.comb(library_size, capacity)

    def rank(self, bits: np.ndarray | Iterable[int]) -> int:
        """Lexicographic index of a valid incidence vector."""
        arr = np.asarray(bits)
        if arr.shape != (self.library_size,):
            raise ValueError(
                f"expected a length-{self.library_size} vector, got shape {arr.shape}"
            )
        members = np.flatnonzero(arr)
        if len(members) != self.capacity or not np.all(np.isin(arr, (0, 1))):
            raise ValueError(
                f"action must have exactly {self.capacity} ones, got {arr.tolist()}"
            )
        return self._rank_members(members)

    def _rank_members(self, members: np.ndarray) -> int:
        n, k = self.library_size, self.capacity
        rank = 0
        prev = -1
        for i, c in enumerate(members):
            for v in range(prev + 1, int(c)):
                rank += math.comb(n - 1 - v, k - 1 - i)
            prev = int(c)
        return rank

    def unrank(self, index: int) -> CacheAction:
        """Incidence vector at a given lexicographic index."""
        if not 0 <= index < self.size:
            raise ValueError(f"index must be in [0, {self.size}), got {index}")
        n, k = self.library_size, self.capacity
        bits = np.zeros(n, dtype=np.int8)
        r = index
        v = 0
        for i in range(k):
            while True:
                below = math.comb(n - 1 - v, k - 1 - i)
                if r < below:
                    break
                r -= below
                v += 1
            bits[v] = 1
            v += 1
        return CacheAction(bits=bits, index=index)

    def from_bits(self, bits: np.ndarray | Iterable[int]) -> CacheAction:
        arr = np.asarray(bits, dtype=np.int8)
        return CacheAction(bits=arr, index=self.rank(arr))

    def from_members(self, members: Iterable[int]) -> CacheAction:
        bits = np.zeros(self.library_size, dtype=np.int8)
        bits[list(members)] = 1
        return self.from_bits(bits)

    def random_action(self, rng: np.random.Generator) -> CacheAction:
        return self.unrank(int(rng.integers(self.size)))

    def __iter__(self) -> Iterator[CacheAction]:
        for index in range(self.size):
            yield self.unrank(index)

    def __repr__(self) -> str:
        return (
            f"ActionSpace(library_size={self.library_size}, "
            f"capacity={self.capacity}, size={self.size})"
        )


def hit_rate(counts: np.ndarray, action: CacheAction) -> float:
    """Fraction of the slot's requests served from cache.

    A slot with no requests counts as fully served (1.0): no demand means
    no misses, and it keeps downstream learning free of NaNs.
    """
    counts = np.asarray(counts)
    total = counts.sum()
    if total <= 0:
        return 1.0
    return float(counts @ action.bits) / float(total)


def reward(theta: float) -> float:
    """Per-slot penalty 1 - theta; agents minimise its accumulation."""
    return 1.0 - theta


class LruCache:
    """Least-recently-used cache processing requests one by one.

    A request is a hit when the content is resident at the moment it is
    processed, so a miss early in a slot can seed hits later in the same
    slot.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._recency: OrderedDict[int, None] = OrderedDict()

    @property
    def resident(self) -> list[int]:
        return list(self._recency)

    def process_slot(self, contents: Iterable[int]) -> float:
        """Serve one slot's requests in arrival order; returns the slot hit rate."""
        hits = 0
        total = 0
        recency = self._recency
        for content in contents:
            total += 1
            if content in recency:
                hits += 1
                recency.move_to_end(content)
            else:
                if len(recency) >= self.capacity:
                    recency.popitem(last=False)
                recency[content] = None
        if total == 0:
            return 1.0
        return hits / total


class LfuCache:
    """Least-frequently-used cache with cumulative request counters.

    Counters cover every content ever seen and survive eviction.  Eviction
    removes the resident with the smallest cumulative count; ties go to the
    least recently inserted resident.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._counts: dict[int, int] = {}
        self._inserted_at: dict[int, int] = {}
        self._insert_seq = 0

    @property
    def resident(self) -> list[int]:
        return list(self._inserted_at)

    def process_slot(self, contents: Iterable[int]) -> float:
        hits = 0
        total = 0
        counts = self._counts
        resident = self._inserted_at
        for content in contents:
            total += 1
            counts[content] = counts.get(content, 0) + 1
            if content in resident:
                hits += 1
                continue
            if len(resident) >= self.capacity:
                victim = min(resident, key=lambda c: (counts[c], resident[c]))
                del resident[victim]
            resident[content] = self._insert_seq
            self._insert_seq += 1
        if total == 0:
            return 1.0
        return hits / total
