"""Reward selection: keep experiences with the largest absolute return."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from replaylab.core import Experience
from replaylab.strategies.base import SelectionStrategy, StrategyKind

if TYPE_CHECKING:
    from replaylab.network import QNetwork

DEFAULT_REWARD_NOISE = 1e-6


class RewardStrategy(SelectionStrategy):
    kind = StrategyKind.REWARD

    def __init__(self, noise: float = DEFAULT_REWARD_NOISE, seed: int = 0):
        if noise < 0:
            raise ValueError(f"reward noise must be non-negative, got {noise}")
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def rank(self, e: Experience, net: QNetwork | None = None) -> float:
        return rank_reward(e, self.rng, self.noise)


def rank_reward(e: Experience, rng: np.random.Generator, noise: float = DEFAULT_REWARD_NOISE) -> float:
    # uniform jitter only separates tied returns
    return abs(e.ret) + float(rng.uniform(0.0, noise))
