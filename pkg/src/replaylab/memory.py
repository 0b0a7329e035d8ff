"""Replay memory: FIFO short-term buffer, rank-ordered episodic store, batch sampling."""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

import numpy as np

from replaylab.core import Experience

if TYPE_CHECKING:
    from replaylab.network import QNetwork
    from replaylab.strategies.base import SelectionStrategy


class EmptyBufferError(ValueError):
    def __init__(self) -> None:
        super().__init__("no experiences")


class FifoBuffer:
    """Ring buffer of the most recent experiences; `capacity=None` never evicts."""

    def __init__(self, capacity: int | None):
        if capacity is not None and capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._start = 0

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Experience]:
        n = len(self._items)
        for i in range(n):
            yield self._items[(self._start + i) % n]

    def __getitem__(self, index: int) -> Experience:
        n = len(self._items)
        if not -n <= index < n:
            raise IndexError(index)
        return self._items[(self._start + index) % n]

    @property
    def full(self) -> bool:
        return self.capacity is not None and len(self._items) >= self.capacity

    def insert(self, e: Experience) -> Experience | None:
        if not self.full:
            self._items.append(e)
            return None
        evicted = self._items[self._start]
        self._items[self._start] = e
        self._start = (self._start + 1) % len(self._items)
        return evicted

    def sample(self, n: int, rng: np.random.Generator) -> list[Experience]:
        if n == 0:
            return []
        if not self._items:
            raise EmptyBufferError()
        # uniform over the backing list; ring order does not matter here
        return [self._items[i] for i in rng.integers(0, len(self._items), size=n)]


def fifo_insert(buf: FifoBuffer, e: Experience) -> Experience | None:
    return buf.insert(e)


@dataclass
class StoredEntry:
    key: int
    rank: float
    experience: Experience


class RankedStore:
    """Bounded episodic memory; the minimum-rank entry is evicted first.

    Ties on rank keep the earlier-inserted entry, so among equal ranks the most
    recently inserted one is the eviction candidate.
    """

    def __init__(self, capacity: int, strategy: SelectionStrategy):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.strategy = strategy
        self._entries: dict[int, StoredEntry] = {}
        self._keys: list[int] = []
        self._positions: dict[int, int] = {}
        self._heap: list[tuple[float, int]] = []
        self._counter = itertools.count()
        self.last_added_key: int | None = None
        self.last_removed_key: int | None = None

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[StoredEntry]:
        return iter(sorted(self._entries.values(), key=lambda entry: (entry.rank, -entry.key)))

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.capacity

    def experiences(self) -> list[Experience]:
        return [entry.experience for entry in self._entries.values()]

    def entry(self, key: int) -> StoredEntry:
        return self._entries[key]

    def min_entry(self) -> StoredEntry | None:
        while self._heap:
            rank, neg_key = self._heap[0]
            entry = self._entries.get(-neg_key)
            if entry is not None and entry.rank == rank:
                return entry
            heapq.heappop(self._heap)  # stale
        return None

    def offer(self, e: Experience, net: QNetwork | None = None) -> Experience | None:
        """Rank `e` with the store's strategy and insert it."""
        return self.strategy.insert(self, e, net)

    def ranked_insert(self, e: Experience, rank: float) -> Experience | None:
        rank = float(rank)
        if math.isnan(rank):
            raise ValueError("rank is NaN")
        if math.isinf(rank):
            raise ValueError(f"rank must be finite, got {rank}")
        self.last_added_key = None
        self.last_removed_key = None
        if self.full:
            weakest = self.min_entry()
            assert weakest is not None
            if rank <= weakest.rank:
                return e
            self._remove(weakest.key)
            self.last_removed_key = weakest.key
            self._add(e, rank)
            return weakest.experience
        self._add(e, rank)
        return None

    def update_rank(self, key: int, rank: float) -> None:
        rank = float(rank)
        if not math.isfinite(rank):
            raise ValueError(f"rank must be finite, got {rank}")
        entry = self._entries[key]
        if entry.rank != rank:
            entry.rank = rank
            heapq.heappush(self._heap, (rank, -key))
            self._compact()

    def sample(self, n: int, rng: np.random.Generator) -> list[StoredEntry]:
        if n == 0:
            return []
        if not self._keys:
            raise EmptyBufferError()
        return [self._entries[self._keys[i]] for i in rng.integers(0, len(self._keys), size=n)]

    def refresh(self, sampled: list[StoredEntry]) -> None:
        self.strategy.refresh(self, sampled)

    def _add(self, e: Experience, rank: float) -> None:
        key = next(self._counter)
        self.last_added_key = key
        self._entries[key] = StoredEntry(key=key, rank=rank, experience=e)
        self._positions[key] = len(self._keys)
        self._keys.append(key)
        heapq.heappush(self._heap, (rank, -key))

    def _remove(self, key: int) -> None:
        del self._entries[key]
        index = self._positions.pop(key)
        last = self._keys.pop()
        if index != len(self._keys):
            self._keys[index] = last
            self._positions[last] = index
        self._compact()

    def _compact(self) -> None:
        if len(self._heap) > 4 * self.capacity:
            self._heap = [(entry.rank, -entry.key) for entry in self._entries.values()]
            heapq.heapify(self._heap)


def ranked_insert(store: RankedStore, e: Experience, rank: float) -> Experience | None:
    return store.ranked_insert(e, rank)


def refresh_on_sample(store: RankedStore, sampled: list[StoredEntry]) -> None:
    store.refresh(sampled)


@dataclass(frozen=True)
class BatchSpec:
    total: int = 60
    from_fifo: int = 30
    from_episodic: int = 30

    def __post_init__(self) -> None:
        if self.total <= 0:
            raise ValueError(f"batch total must be positive, got {self.total}")
        if self.from_fifo < 0 or self.from_episodic < 0:
            raise ValueError("batch shares must be non-negative")
        if self.from_fifo + self.from_episodic != self.total:
            raise ValueError(
                f"from_fifo + from_episodic ({self.from_fifo} + {self.from_episodic}) != total ({self.total})"
            )


def sample_batch(
    fifo: FifoBuffer,
    episodic: RankedStore | None,
    spec: BatchSpec,
    rng: np.random.Generator,
) -> list[Experience]:
    """Uniform with-replacement draws from each buffer per the BatchSpec split.

    An empty buffer's share is moved to the other one so the batch is always full.
    """
    episodic_size = len(episodic) if episodic is not None else 0
    if len(fifo) == 0 and episodic_size == 0:
        raise EmptyBufferError()

    n_fifo, n_episodic = spec.from_fifo, spec.from_episodic
    if episodic_size == 0:
        n_fifo, n_episodic = spec.total, 0
    elif len(fifo) == 0:
        n_fifo, n_episodic = 0, spec.total

    batch = fifo.sample(n_fifo, rng)
    if n_episodic:
        assert episodic is not None
        drawn = episodic.sample(n_episodic, rng)
        batch.extend(entry.experience for entry in drawn)
        episodic.refresh(drawn)
    return batch


def composition_report(store: RankedStore | FifoBuffer) -> dict[int, int]:
    """Per-task counts of stored experiences."""
    experiences = store.experiences() if isinstance(store, RankedStore) else list(store)
    return dict(sorted(Counter(e.task_id for e in experiences).items()))
