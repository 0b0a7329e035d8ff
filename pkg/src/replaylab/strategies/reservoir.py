"""Global distribution matching via reservoir sampling.

Every experience gets an i.i.d. standard-normal key and the store keeps the
largest keys, so at time t each experience seen so far is retained with
probability min(1, capacity / t) regardless of when it arrived.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from replaylab.core import Experience
from replaylab.strategies.base import SelectionStrategy, StrategyKind

if TYPE_CHECKING:
    from replaylab.network import QNetwork


class ReservoirStrategy(SelectionStrategy):
    kind = StrategyKind.RESERVOIR

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def rank(self, e: Experience, net: QNetwork | None = None) -> float:
        return rank_reservoir(self.rng)


def rank_reservoir(rng: np.random.Generator) -> float:
    return float(rng.standard_normal())
