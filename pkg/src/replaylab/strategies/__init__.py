"""Experience selection strategies for the episodic store."""

from __future__ import annotations

from replaylab.core import DEFAULT_GAMMA, Metric
from replaylab.network import Objective
from replaylab.strategies.base import SelectionStrategy, StrategyKind
from replaylab.strategies.coverage import CoverageStrategy, FeatureFn, coverage_insert
from replaylab.strategies.reservoir import ReservoirStrategy, rank_reservoir
from replaylab.strategies.reward import DEFAULT_REWARD_NOISE, RewardStrategy, rank_reward
from replaylab.strategies.surprise import SurpriseOrder, SurpriseStrategy, SurpriseTarget, rank_surprise

__all__ = [
    "DEFAULT_REWARD_NOISE",
    "CoverageStrategy",
    "ReservoirStrategy",
    "RewardStrategy",
    "SelectionStrategy",
    "StrategyKind",
    "SurpriseOrder",
    "SurpriseStrategy",
    "SurpriseTarget",
    "build_strategy",
    "coverage_insert",
    "rank_reservoir",
    "rank_reward",
    "rank_surprise",
]


def build_strategy(
    kind: StrategyKind | str,
    *,
    seed: int = 0,
    feature_fn: FeatureFn | None = None,
    metric: Metric = Metric.L1,
    distance: float | None = None,
    reward_noise: float = DEFAULT_REWARD_NOISE,
    surprise_target: SurpriseTarget = SurpriseTarget.RETURN,
    surprise_order: SurpriseOrder = SurpriseOrder.MAX,
    surprise_refresh: bool = False,
    objective: Objective = Objective.TD,
    gamma: float = DEFAULT_GAMMA,
) -> SelectionStrategy:
    """Instantiate the strategy named by `kind`."""
    try:
        kind = StrategyKind(kind)
    except ValueError:
        choices = ", ".join(k.value for k in StrategyKind)
        raise ValueError(f"Unknown selection strategy: {kind!r}. Choose one of {choices}.") from None

    match kind:
        case StrategyKind.SURPRISE:
            return SurpriseStrategy(
                target=surprise_target,
                order=surprise_order,
                objective=objective,
                gamma=gamma,
                refresh_on_sample=surprise_refresh,
            )
        case StrategyKind.REWARD:
            return RewardStrategy(noise=reward_noise, seed=seed)
        case StrategyKind.RESERVOIR:
            return ReservoirStrategy(seed=seed)
        case StrategyKind.COVERAGE:
            if feature_fn is None:
                raise ValueError("coverage strategy needs a feature function")
            return CoverageStrategy(feature_fn=feature_fn, metric=metric, distance=distance)
