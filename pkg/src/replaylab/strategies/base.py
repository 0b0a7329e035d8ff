"""Abstract selection strategy interface and shared types."""

from __future__ import annotations

from abc import ABC, abstractmethod
from enum import Enum
from typing import TYPE_CHECKING, Sequence

from replaylab.core import Experience

if TYPE_CHECKING:
    from replaylab.memory import RankedStore, StoredEntry
    from replaylab.network import QNetwork


class StrategyKind(str, Enum):
    SURPRISE = "surprise"
    REWARD = "reward"
    RESERVOIR = "reservoir"
    COVERAGE = "coverage"


class SelectionStrategy(ABC):
    """Assigns retention ranks to experiences offered to a RankedStore.

    Strategies only ever see experiences with the task label masked.
    """

    kind: StrategyKind

    @abstractmethod
    def rank(self, e: Experience, net: QNetwork | None = None) -> float:
        """Rank key for one (masked) experience; higher ranks are kept longer."""
        ...

    def rank_all(self, experiences: Sequence[Experience], net: QNetwork | None = None) -> list[float]:
        return [self.rank(e, net) for e in experiences]

    def insert(self, store: RankedStore, e: Experience, net: QNetwork | None = None) -> Experience | None:
        return store.ranked_insert(e, self.rank(e.masked(), net))

    def insert_all(
        self, store: RankedStore, experiences: Sequence[Experience], net: QNetwork | None = None
    ) -> list[Experience]:
        """Offer a batch of experiences; returns everything evicted or rejected."""
        ranks = self.rank_all([e.masked() for e in experiences], net)
        evicted = []
        for e, rank in zip(experiences, ranks):
            out = store.ranked_insert(e, rank)
            if out is not None:
                evicted.append(out)
        return evicted

    def refresh(self, store: RankedStore, sampled: Sequence[StoredEntry]) -> None:
        """Hook run on entries drawn for training; ranks are frozen by default."""
        return None
