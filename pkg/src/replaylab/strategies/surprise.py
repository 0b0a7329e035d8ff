"""Surprise selection: keep the experiences the network predicted worst at insertion."""

from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING, Sequence

from replaylab.core import DEFAULT_GAMMA, Experience
from replaylab.network import Objective, QNetwork
from replaylab.strategies.base import SelectionStrategy, StrategyKind

if TYPE_CHECKING:
    from replaylab.memory import RankedStore, StoredEntry


class SurpriseTarget(str, Enum):
    RETURN = "return"
    ONE_STEP = "one-step"


class SurpriseOrder(str, Enum):
    MAX = "max"
    MIN = "min"


class SurpriseStrategy(SelectionStrategy):
    """Rank by |target - Q(s, a)| computed against the network at insertion time.

    Ranks stay frozen unless `refresh_on_sample` is set, in which case sampled
    entries are re-scored against the current network.
    """

    kind = StrategyKind.SURPRISE

    def __init__(
        self,
        target: SurpriseTarget = SurpriseTarget.RETURN,
        order: SurpriseOrder = SurpriseOrder.MAX,
        objective: Objective = Objective.TD,
        gamma: float = DEFAULT_GAMMA,
        refresh_on_sample: bool = False,
    ):
        self.target = SurpriseTarget(target)
        self.order = SurpriseOrder(order)
        self.objective = Objective(objective)
        self.gamma = gamma
        self.refresh_on_sample = refresh_on_sample
        self._net: QNetwork | None = None

    def _errors(self, experiences: Sequence[Experience], net: QNetwork | None) -> list[float]:
        if net is None:
            raise ValueError("surprise ranking needs the current network")
        self._net = net
        if self.objective is Objective.TD and self.target is SurpriseTarget.ONE_STEP:
            errors = net.one_step_td_errors(experiences, self.gamma)
        else:
            errors = net.example_errors(experiences, self.objective)
        sign = 1.0 if self.order is SurpriseOrder.MAX else -1.0
        return [sign * float(err) for err in errors]

    def rank(self, e: Experience, net: QNetwork | None = None) -> float:
        return self._errors([e], net)[0]

    def rank_all(self, experiences: Sequence[Experience], net: QNetwork | None = None) -> list[float]:
        return self._errors(experiences, net)

    def refresh(self, store: RankedStore, sampled: Sequence[StoredEntry]) -> None:
        if not self.refresh_on_sample or self._net is None or not sampled:
            return
        unique = {entry.key: entry for entry in sampled}
        ranks = self._errors([entry.experience.masked() for entry in unique.values()], self._net)
        for key, rank in zip(unique, ranks):
            store.update_rank(key, rank)


def rank_surprise(e: Experience, net: QNetwork) -> float:
    return SurpriseStrategy().rank(e, net)
