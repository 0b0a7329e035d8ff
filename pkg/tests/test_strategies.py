import numpy as np
import pytest

from conftest import make_experience
from replaylab.core import TASK_MASKED, Experience
from replaylab.memory import RankedStore
from replaylab.network import LayerSpec, Objective, QNetwork
from replaylab.strategies import (
    CoverageStrategy,
    ReservoirStrategy,
    RewardStrategy,
    SelectionStrategy,
    StrategyKind,
    SurpriseOrder,
    SurpriseStrategy,
    SurpriseTarget,
    build_strategy,
    coverage_insert,
    rank_reservoir,
    rank_reward,
    rank_surprise,
)


def _bias_net(value: float) -> QNetwork:
    """One linear unit over a single input with zero weight: Q(s, 0) == value everywhere."""
    net = QNetwork((1, 1, 1), [LayerSpec.output(1)], seed=None)
    net.params[:] = [0.0, value]
    return net


def _one(ret: float = 0.0, reward: float = 0.0, terminal: bool = False) -> Experience:
    return make_experience(ret=ret, reward=reward, size=1, terminal=terminal)


class _Recorder(SelectionStrategy):
    kind = StrategyKind.RESERVOIR

    def __init__(self):
        self.seen: list[int] = []

    def rank(self, e, net=None):
        self.seen.append(e.task_id)
        return float(e.step_index)


# ----------------------------------------------------------------------
# Surprise
# ----------------------------------------------------------------------


def test_surprise_against_zero_network() -> None:
    assert rank_surprise(_one(ret=1.0), _bias_net(0.0)) == 1.0


def test_surprise_of_perfect_prediction_is_zero() -> None:
    assert rank_surprise(_one(ret=0.25), _bias_net(0.25)) == 0.0


def test_surprise_hand_example() -> None:
    assert rank_surprise(_one(ret=-1.0), _bias_net(0.25)) == pytest.approx(1.25)


def test_surprise_needs_matching_state_length() -> None:
    with pytest.raises(ValueError, match="does not match"):
        rank_surprise(make_experience(ret=1.0, size=3), _bias_net(0.0))


def test_surprise_needs_a_network() -> None:
    with pytest.raises(ValueError, match="network"):
        SurpriseStrategy().rank(_one())


def test_one_step_target_bootstraps_from_next_state() -> None:
    net = _bias_net(0.25)
    strategy = SurpriseStrategy(target=SurpriseTarget.ONE_STEP, gamma=0.95)
    assert strategy.rank(_one(reward=1.0), net) == pytest.approx(abs(1.0 + 0.95 * 0.25 - 0.25))
    assert strategy.rank(_one(reward=1.0, terminal=True), net) == pytest.approx(0.75)


def test_min_order_negates() -> None:
    strategy = SurpriseStrategy(order=SurpriseOrder.MIN)
    assert strategy.rank(_one(ret=-1.0), _bias_net(0.25)) == pytest.approx(-1.25)


def test_rank_all_matches_rank() -> None:
    net = QNetwork((1, 1, 4), [LayerSpec.dense(5), LayerSpec.output(2)], seed=3)
    batch = [make_experience(i, ret=0.1 * i, action=i % 2) for i in range(6)]
    strategy = SurpriseStrategy()
    assert strategy.rank_all(batch, net) == pytest.approx([strategy.rank(e, net) for e in batch])


def test_surprise_ranks_are_frozen_by_default() -> None:
    net = _bias_net(0.0)
    strategy = SurpriseStrategy()
    store = RankedStore(4, strategy)
    for ret in (1.0, 2.0, 3.0):
        store.offer(_one(ret=ret), net)
    before = [entry.rank for entry in store]

    net.params[:] = [0.0, 10.0]
    store.refresh(list(store))
    assert [entry.rank for entry in store] == before


def test_surprise_refresh_option_rescored_against_latest_network() -> None:
    net = _bias_net(0.0)
    strategy = SurpriseStrategy(refresh_on_sample=True)
    store = RankedStore(4, strategy)
    store.offer(_one(ret=1.0), net)

    net.params[:] = [0.0, 0.75]
    store.refresh(list(store))
    assert [entry.rank for entry in store] == pytest.approx([0.25])


# ----------------------------------------------------------------------
# Reward
# ----------------------------------------------------------------------


@pytest.mark.parametrize("ret, low", [(1.0, 1.0), (-1.0, 1.0), (0.0, 0.0)])
def test_reward_rank_is_absolute_return_plus_jitter(ret, low, rng) -> None:
    for _ in range(200):
        rank = rank_reward(_one(ret=ret), rng)
        assert low <= rank <= low + 1e-6


def test_reward_jitter_breaks_ties() -> None:
    strategy = RewardStrategy(seed=0)
    ranks = {strategy.rank(_one(ret=0.5)) for _ in range(50)}
    assert len(ranks) == 50


def test_reward_noise_must_be_non_negative() -> None:
    with pytest.raises(ValueError):
        RewardStrategy(noise=-1.0)


# ----------------------------------------------------------------------
# Reservoir
# ----------------------------------------------------------------------


def test_reservoir_draws_differ_and_repeat_per_seed() -> None:
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    first, second = rank_reservoir(a), rank_reservoir(a)
    assert first != second
    assert [first, second] == [rank_reservoir(b), rank_reservoir(b)]


def test_reservoir_keys_are_standard_normal() -> None:
    rng = np.random.default_rng(0)
    draws = np.array([rank_reservoir(rng) for _ in range(1_000_000)])
    assert abs(draws.mean()) <= 0.005
    assert draws.std() == pytest.approx(1.0, abs=0.005)


def test_reservoir_sampling_leaves_ranks_alone() -> None:
    strategy = ReservoirStrategy(seed=1)
    store = RankedStore(5, strategy)
    for i in range(20):
        store.offer(make_experience(i))
    before = {entry.key: entry.rank for entry in store}
    store.refresh(store.sample(10, np.random.default_rng(0)))
    assert {entry.key: entry.rank for entry in store} == before


# ----------------------------------------------------------------------
# Task masking and construction
# ----------------------------------------------------------------------


def test_strategies_never_see_task_ids() -> None:
    recorder = _Recorder()
    store = RankedStore(3, recorder)
    store.offer(make_experience(0, task_id=2))
    recorder.insert_all(store, [make_experience(i, task_id=i % 3) for i in range(1, 6)])
    assert recorder.seen == [TASK_MASKED] * 6
    # the stored copies keep their label for reporting
    assert {e.task_id for e in store.experiences()} <= {0, 1, 2}


def test_coverage_feature_sees_masked_experience() -> None:
    seen = []

    def feature(e):
        seen.append(e.task_id)
        return e.state

    store = RankedStore(2, CoverageStrategy(feature_fn=feature, distance=1.0))
    coverage_insert(store, make_experience(0, task_id=1))
    assert seen == [TASK_MASKED]
    assert store.experiences()[0].task_id == 1


def test_coverage_insert_needs_coverage_store() -> None:
    with pytest.raises(ValueError, match="coverage"):
        coverage_insert(RankedStore(2, ReservoirStrategy()), make_experience(0))


@pytest.mark.parametrize(
    "kind, cls",
    [
        ("surprise", SurpriseStrategy),
        ("reward", RewardStrategy),
        ("reservoir", ReservoirStrategy),
        ("coverage", CoverageStrategy),
    ],
)
def test_build_strategy(kind, cls) -> None:
    strategy = build_strategy(kind, feature_fn=lambda e: e.state)
    assert isinstance(strategy, cls)
    assert strategy.kind.value == kind


def test_build_strategy_errors() -> None:
    with pytest.raises(ValueError, match="Unknown selection strategy"):
        build_strategy("lottery")
    with pytest.raises(ValueError, match="feature function"):
        build_strategy("coverage")


def test_cross_entropy_surprise_uses_example_loss() -> None:
    net = QNetwork((1, 1, 1), [LayerSpec.output(2)], seed=None)
    strategy = SurpriseStrategy(objective=Objective.CROSS_ENTROPY)
    # equal logits: loss is log(2)
    assert strategy.rank(make_experience(action=1, size=1), net) == pytest.approx(np.log(2.0))
