"""Coverage maximization: evict the experiences with the most neighbors within distance d."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from replaylab.core import Experience, Metric, pairwise_distances
from replaylab.strategies.base import SelectionStrategy, StrategyKind

if TYPE_CHECKING:
    from replaylab.memory import RankedStore, StoredEntry
    from replaylab.network import QNetwork

logger = logging.getLogger(__name__)

CALIBRATION_SIZE = 200

FeatureFn = Callable[[Experience], np.ndarray]


def calibrate_distance(features: np.ndarray, metric: Metric) -> float:
    """Median pairwise distance; falls back to the mean positive distance when the median is 0."""
    n = len(features)
    if n < 2:
        return 0.0
    dists = np.concatenate([pairwise_distances(metric, features[i + 1 :], features[i]) for i in range(n - 1)])
    median = float(np.median(dists))
    if median > 0.0:
        return median
    positive = dists[dists > 0.0]
    return float(positive.mean()) if positive.size else 0.0


class CoverageStrategy(SelectionStrategy):
    """Rank = -(number of other stored experiences closer than `distance`).

    Counts are kept exact: every add and eviction updates the ranks of the
    entries it touches, and the incoming experience is weighed against the
    store as it would look with it included. When `distance` is None it is
    auto-calibrated as the median pairwise feature distance of the first 200
    offered experiences and frozen from then on; until then the median over the
    experiences seen so far is used and all stored counts follow it.
    """

    kind = StrategyKind.COVERAGE

    def __init__(
        self,
        feature_fn: FeatureFn,
        metric: Metric = Metric.L1,
        distance: float | None = None,
        calibration_size: int = CALIBRATION_SIZE,
    ):
        if distance is not None and distance < 0:
            raise ValueError(f"coverage distance must be non-negative, got {distance}")
        self.feature_fn = feature_fn
        self.metric = Metric(metric)
        self.distance = distance
        self.calibration_size = calibration_size
        self._calibrating = distance is None
        self._seen: list[np.ndarray] = []
        self._rows: dict[int, int] = {}
        self._counts: dict[int, int] = {}
        self._matrix: np.ndarray | None = None
        self._row_keys: np.ndarray | None = None
        self._free: list[int] = []

    # ------------------------------------------------------------------
    # Feature cache, one row per stored experience
    # ------------------------------------------------------------------

    def _ensure_matrix(self, dim: int, capacity: int) -> None:
        if self._matrix is None:
            self._matrix = np.zeros((capacity, dim))
            self._row_keys = np.full(capacity, -1, dtype=np.int64)
            self._free = list(range(capacity - 1, -1, -1))

    def _store_feature(self, key: int, feature: np.ndarray) -> None:
        row = self._free.pop()
        self._matrix[row] = feature
        self._row_keys[row] = key
        self._rows[key] = row

    def _drop_feature(self, key: int) -> np.ndarray:
        row = self._rows.pop(key)
        self._row_keys[row] = -1
        self._free.append(row)
        return self._matrix[row].copy()

    def _near_keys(self, feature: np.ndarray, exclude: int | None = None) -> list[int]:
        """Keys of stored entries strictly closer than `distance` to `feature`."""
        if not self._rows or not self.distance:
            return []
        rows = np.flatnonzero(self._row_keys >= 0)
        close = pairwise_distances(self.metric, self._matrix[rows], feature) < self.distance
        return [int(k) for k in self._row_keys[rows[close]] if k != exclude]

    def _set_count(self, store: RankedStore, key: int, count: int) -> None:
        self._counts[key] = count
        store.update_rank(key, -float(count))

    def _recount(self, store: RankedStore) -> None:
        for key, row in self._rows.items():
            self._set_count(store, key, len(self._near_keys(self._matrix[row], exclude=key)))

    def _observe(self, feature: np.ndarray, store: RankedStore) -> None:
        if not self._calibrating:
            return
        self._seen.append(feature)
        previous = self.distance
        self.distance = calibrate_distance(np.stack(self._seen), self.metric)
        if len(self._seen) >= self.calibration_size:
            self._calibrating = False
            self._seen = []
            logger.info("coverage distance calibrated to %.6g (%s)", self.distance, self.metric.value)
        if self.distance != previous:
            self._recount(store)

    def neighbor_count(self, feature: np.ndarray, exclude: int | None = None) -> int:
        return len(self._near_keys(np.asarray(feature, dtype=np.float64), exclude=exclude))

    # ------------------------------------------------------------------
    # SelectionStrategy
    # ------------------------------------------------------------------

    def rank(self, e: Experience, net: QNetwork | None = None) -> float:
        return -float(self.neighbor_count(self.feature_fn(e)))

    def insert(self, store: RankedStore, e: Experience, net: QNetwork | None = None) -> Experience | None:
        feature = np.asarray(self.feature_fn(e.masked()), dtype=np.float64)
        self._ensure_matrix(feature.size, store.capacity)
        self._observe(feature, store)

        near = self._near_keys(feature)
        for key in near:
            self._set_count(store, key, self._counts[key] + 1)
        count = len(near)
        evicted = store.ranked_insert(e, -float(count))
        if store.last_added_key is None:
            for key in near:
                self._set_count(store, key, self._counts[key] - 1)
            return e

        removed = store.last_removed_key
        if removed is not None:
            self._counts.pop(removed)
            removed_feature = self._drop_feature(removed)
            for key in self._near_keys(removed_feature):
                self._set_count(store, key, self._counts[key] - 1)
            if removed in near:
                count -= 1
        added = store.last_added_key
        self._store_feature(added, feature)
        self._set_count(store, added, count)
        return evicted

    def insert_all(
        self, store: RankedStore, experiences: Sequence[Experience], net: QNetwork | None = None
    ) -> list[Experience]:
        evicted = []
        for e in experiences:
            out = self.insert(store, e, net)
            if out is not None:
                evicted.append(out)
        return evicted

    def refresh(self, store: RankedStore, sampled: Sequence[StoredEntry]) -> None:
        """Recount neighbors of sampled entries against the current store contents."""
        for key in {entry.key for entry in sampled}:
            row = self._rows.get(key)
            if row is None:
                continue
            self._set_count(store, key, self.neighbor_count(self._matrix[row], exclude=key))

    def neighbor_counts(self, store: RankedStore) -> dict[int, int]:
        """Exact recount for every stored entry, keyed by store key."""
        return {
            entry.key: self.neighbor_count(self._matrix[self._rows[entry.key]], exclude=entry.key) for entry in store
        }


def coverage_insert(store: RankedStore, e: Experience) -> Experience | None:
    if not isinstance(store.strategy, CoverageStrategy):
        raise ValueError("coverage_insert needs a store using the coverage strategy")
    return store.strategy.insert(store, e)
