import hashlib

import numpy as np
import pytest

from conftest import make_experience
from replaylab.agent import (
    Agent,
    AgentConfig,
    absorb_trajectory,
    evaluate,
    run_episode,
    select_action,
    train_step,
)
from replaylab.envs.digits import build_tasks, synthetic_digits
from replaylab.envs.gridworld import OBSERVATION_SHAPE, Action, GridWorld
from replaylab.memory import BatchSpec, FifoBuffer, RankedStore, composition_report, sample_batch
from replaylab.network import LayerSpec, Objective, QNetwork
from replaylab.optim import OptimizerConfig, OptimizerKind
from replaylab.strategies import ReservoirStrategy


class _GoalNextDoor(GridWorld):
    def reset(self, task_id=None, rng=None):
        super().reset(task_id, rng)
        self.goal = (0, 1)
        return self.observation()


def _bias_net(shape, biases) -> QNetwork:
    net = QNetwork(shape, [LayerSpec.output(len(biases))], seed=None)
    net.params[-len(biases) :] = biases
    return net


def _preferring(action: Action) -> QNetwork:
    biases = np.zeros(4)
    biases[action] = 1.0
    return _bias_net(OBSERVATION_SHAPE, biases)


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


GREEDY = AgentConfig(epsilon=0.0)


# ----------------------------------------------------------------------
# select_action
# ----------------------------------------------------------------------


def test_greedy_picks_the_best_action(rng) -> None:
    net = _bias_net((1, 1, 1), [0.1, 0.9, 0.3])
    assert select_action(net, np.zeros(1), 0.0, rng) == 1


def test_greedy_ties_go_to_lowest_index(rng) -> None:
    net = _bias_net((1, 1, 1), [0.0, 0.0, 0.0])
    assert select_action(net, np.zeros(1), 0.0, rng) == 0


def test_full_exploration_is_uniform(rng) -> None:
    net = _bias_net((1, 1, 1), [0.0, 5.0, 0.0, 0.0])
    n = 100_000
    counts = np.bincount([select_action(net, np.zeros(1), 1.0, rng) for _ in range(n)], minlength=4)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 4 * sigma)


def test_epsilon_out_of_range(rng) -> None:
    with pytest.raises(ValueError, match="epsilon"):
        select_action(_bias_net((1, 1, 1), [0.0]), np.zeros(1), 1.5, rng)


# ----------------------------------------------------------------------
# run_episode
# ----------------------------------------------------------------------


def test_one_step_episode(rng) -> None:
    traj = run_episode(_GoalNextDoor(task_id=0), _preferring(Action.RIGHT), GREEDY, rng)
    assert len(traj) == 1
    (e,) = traj.experiences
    assert e.terminal
    assert e.reward == 1.0
    assert e.ret == 1.0
    assert e.action == Action.RIGHT
    assert traj.episode_reward == 1.0


def test_timeout_episode_has_full_length(rng) -> None:
    traj = run_episode(GridWorld(task_id=0, seed=0), _preferring(Action.UP), GREEDY, rng)
    assert len(traj) == 100
    assert not traj.reached_terminal
    assert all(e.reward == pytest.approx(-0.01) for e in traj.experiences)
    traj.validate(max_steps=100)


def test_returns_follow_the_recursion(rng) -> None:
    cfg = AgentConfig(epsilon=0.0, gamma=0.9)
    traj = run_episode(GridWorld(task_id=0, seed=0), _preferring(Action.UP), cfg, rng, max_steps=5)
    rets = [e.ret for e in traj.experiences]
    for i in range(4):
        assert rets[i] == pytest.approx(-0.01 + 0.9 * rets[i + 1])
    assert rets[-1] == pytest.approx(-0.01)


def test_episode_can_be_cut_short(rng) -> None:
    calls = []
    traj = run_episode(
        GridWorld(task_id=1, seed=0),
        _preferring(Action.UP),
        GREEDY,
        rng,
        start_index=50,
        max_steps=10,
        on_step=lambda: calls.append(1),
    )
    assert len(traj) == 10
    assert len(calls) == 10
    assert [e.step_index for e in traj.experiences] == list(range(50, 60))
    assert {e.task_id for e in traj.experiences} == {1}
    assert not traj.experiences[-1].terminal


# ----------------------------------------------------------------------
# Buffers and training
# ----------------------------------------------------------------------


def test_absorb_without_episodic_store() -> None:
    fifo = FifoBuffer(5)
    absorb_trajectory([make_experience(i) for i in range(3)], fifo, None)
    assert len(fifo) == 3


def test_absorb_offers_everything_to_the_store() -> None:
    fifo = FifoBuffer(2)
    store = RankedStore(3, ReservoirStrategy(seed=0))
    absorb_trajectory([make_experience(i) for i in range(6)], fifo, store)
    assert [e.step_index for e in fifo] == [4, 5]
    assert len(store) == 3


def test_train_step_with_nothing_stored(rng) -> None:
    net = QNetwork((1, 1, 4), [LayerSpec.output(4)], seed=0)
    assert train_step(net, FifoBuffer(10), None, AgentConfig(), rng) is None


def test_train_step_fits_a_single_return(rng) -> None:
    net = QNetwork((1, 1, 4), [LayerSpec.output(4)], seed=0)
    fifo = FifoBuffer(10)
    fifo.insert(make_experience(state=np.full(4, 0.5), ret=1.0, action=2))
    cfg = AgentConfig(optimizer=OptimizerConfig(kind=OptimizerKind.SGD, learning_rate=0.05))
    first = train_step(net, fifo, None, cfg, rng)
    for _ in range(200):
        last = train_step(net, fifo, None, cfg, rng)
    assert last.loss < 1e-3 * first.loss
    assert net.forward(np.full(4, 0.5))[2] == pytest.approx(1.0, abs=1e-2)


def test_train_step_loss_matches_a_recomputation() -> None:
    net = QNetwork((1, 1, 4), [LayerSpec.dense(5), LayerSpec.output(4)], seed=2)
    fifo = FifoBuffer(10)
    store = RankedStore(10, ReservoirStrategy(seed=0))
    for i in range(6):
        fifo.insert(make_experience(i, ret=0.1 * i, action=i % 4))
        store.offer(make_experience(100 + i, ret=-0.2 * i, action=(i + 1) % 4))
    cfg = AgentConfig(batch=BatchSpec(total=10, from_fifo=6, from_episodic=4))

    before = net.copy()
    batch = sample_batch(fifo, store, cfg.batch, np.random.default_rng(5))
    result = train_step(net, fifo, store, cfg, np.random.default_rng(5))

    q = before.predict(np.stack([e.state for e in batch]))
    residual = np.array([e.ret for e in batch]) - q[np.arange(len(batch)), [e.action for e in batch]]
    assert result.loss == pytest.approx(float(np.mean(residual**2)), rel=1e-12)
    assert result.max_td_error == pytest.approx(float(np.abs(residual).max()), rel=1e-12)
    assert not np.array_equal(net.params, before.params)


def test_agent_config_validation() -> None:
    with pytest.raises(ValueError, match="epsilon"):
        AgentConfig(epsilon=-0.1)
    with pytest.raises(ValueError, match="gamma"):
        AgentConfig(gamma=0.0)
    with pytest.raises(ValueError, match="eval_every"):
        AgentConfig(eval_every=0)
    assert AgentConfig(episodic_capacity=0).fifo_only


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------


def test_evaluation_leaves_training_state_alone(small_grid_net) -> None:
    cfg = AgentConfig(eval_episodes=5)
    agent = Agent(small_grid_net, cfg, ReservoirStrategy(seed=0), seed=0)
    absorb_trajectory(
        run_episode(GridWorld(task_id=0, seed=0), agent.net, cfg, agent.rng, max_steps=20),
        agent.fifo,
        agent.episodic,
        agent.net,
    )
    before = (
        _digest(agent.net.params),
        [e.step_index for e in agent.fifo],
        sorted(entry.key for entry in agent.episodic),
        agent.rng.bit_generator.state,
    )
    agent.evaluate([GridWorld(task_id=t, seed=t) for t in range(3)])
    after = (
        _digest(agent.net.params),
        [e.step_index for e in agent.fifo],
        sorted(entry.key for entry in agent.episodic),
        agent.rng.bit_generator.state,
    )
    assert before == after


def test_untrained_network_rarely_reaches_goals(small_grid_net) -> None:
    summary = evaluate(small_grid_net, [GridWorld(task_id=t, seed=t) for t in range(3)], 20, np.random.default_rng(0))
    assert set(summary.success) == {0, 1, 2}
    assert np.mean(list(summary.success.values())) < 0.9
    for task, mean_return in summary.mean_return.items():
        assert -1.0 - 1e-9 <= mean_return <= 1.0


def test_evaluation_needs_an_episode(small_grid_net) -> None:
    with pytest.raises(ValueError, match="episodes_per_task"):
        evaluate(small_grid_net, [GridWorld(task_id=0)], 0, np.random.default_rng(0))


# ----------------------------------------------------------------------
# Lifelong loop
# ----------------------------------------------------------------------


def _grid_agent(seed: int) -> Agent:
    net = QNetwork(OBSERVATION_SHAPE, [LayerSpec.dense(16), LayerSpec.output(4)], seed=seed)
    cfg = AgentConfig(
        batch=BatchSpec(total=8, from_fifo=4, from_episodic=4),
        fifo_capacity=30,
        episodic_capacity=20,
        eval_every=50,
        eval_episodes=3,
    )
    return Agent(net, cfg, ReservoirStrategy(seed=seed), seed=seed)


def test_lifelong_schedule_and_records() -> None:
    agent = _grid_agent(7)
    seen = []
    records = agent.train_lifelong(
        [GridWorld(task_id=0, seed=0), GridWorld(task_id=1, seed=1)], [60, 60], on_record=seen.append
    )
    assert [r.global_step for r in records] == [0, 50, 100, 120]
    assert [r.training_task for r in records] == [0, 0, 1, 1]
    assert seen == records
    assert agent.global_step == 120
    assert 0 < len(agent.td_trace) <= 120
    assert all(step <= 120 for step, _ in agent.td_trace)
    assert {e.task_id for e in agent.fifo} <= {0, 1}
    assert len(agent.fifo) == 30
    assert len(agent.episodic) == 20
    for r in records:
        assert set(r.per_task_success) == {0, 1}
        assert all(0.0 <= s <= 1.0 for s in r.per_task_success.values())
        assert np.isfinite(r.max_td_error_seen)
        assert r.max_td_error_seen >= 0.0
    assert any(r.max_td_error_seen > 0.0 for r in records[1:])


def test_lifelong_run_is_reproducible() -> None:
    envs = lambda: [GridWorld(task_id=0, seed=0), GridWorld(task_id=2, seed=2)]  # noqa: E731
    a, b = _grid_agent(3), _grid_agent(3)
    ra = a.train_lifelong(envs(), [40, 40])
    rb = b.train_lifelong(envs(), [40, 40])
    assert [r.per_task_success for r in ra] == [r.per_task_success for r in rb]
    assert a.td_trace == b.td_trace
    assert _digest(a.net.params) == _digest(b.net.params)


def test_step_budgets_must_match_tasks() -> None:
    with pytest.raises(ValueError, match="step budgets"):
        _grid_agent(0).train_lifelong([GridWorld(task_id=0)], [10, 10])


def test_store_requires_a_strategy(small_grid_net) -> None:
    with pytest.raises(ValueError, match="needs a selection strategy"):
        Agent(small_grid_net, AgentConfig(), None)
    assert Agent(small_grid_net, AgentConfig(episodic_capacity=0), None).episodic is None


def test_digit_tasks_train_through_the_same_loop() -> None:
    data = synthetic_digits(np.random.default_rng(0), per_class=20)
    train, test = data.split(0.25, np.random.default_rng(1))
    tasks = build_tasks(train, test, num_tasks=2)
    net = QNetwork((28, 28, 1), [LayerSpec.output(10)], seed=0)
    cfg = AgentConfig(
        objective=Objective.CROSS_ENTROPY,
        optimizer=OptimizerConfig(kind=OptimizerKind.SGD, learning_rate=0.05),
        fifo_capacity=20,
        episodic_capacity=30,
        eval_every=20,
        eval_episodes=10,
    )
    agent = Agent(net, cfg, ReservoirStrategy(seed=0), seed=0)
    records = agent.train_lifelong(tasks, [40, 40])
    assert [r.global_step for r in records] == [0, 20, 40, 60, 80]
    assert all(r.per_task_mean_return == {0: 0.0, 1: 0.0} for r in records)
    assert {e.task_id for e in agent.episodic.experiences()} <= {0, 1}
    assert all(e.terminal for e in agent.fifo)
    for r in records:
        assert np.isfinite(r.max_td_error_seen)
        assert r.max_td_error_seen >= 0.0


def test_digit_tasks_default_to_their_own_budgets() -> None:
    data = synthetic_digits(np.random.default_rng(0), per_class=20)
    train, test = data.split(0.25, np.random.default_rng(1))
    tasks = build_tasks(train, test, num_tasks=2, iterations=15)
    net = QNetwork((28, 28, 1), [LayerSpec.output(10)], seed=0)
    cfg = AgentConfig(
        objective=Objective.CROSS_ENTROPY,
        optimizer=OptimizerConfig(kind=OptimizerKind.SGD, learning_rate=0.05),
        fifo_capacity=50,
        episodic_capacity=0,
        eval_every=100,
        eval_episodes=5,
    )
    agent = Agent(net, cfg, None, seed=0)
    records = agent.train_lifelong(tasks)
    assert agent.global_step == 30
    assert [r.global_step for r in records] == [0, 30]
    assert composition_report(agent.fifo) == {0: 15, 1: 15}


def test_grid_tasks_need_explicit_budgets() -> None:
    with pytest.raises(ValueError, match="no step budget"):
        _grid_agent(0).train_lifelong([GridWorld(task_id=0)])
