"""Core lifelong training loop: epsilon-greedy control, dual-buffer replay, periodic evaluation."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from replaylab.core import DEFAULT_GAMMA, Experience, Trajectory, discounted_returns
from replaylab.envs.digits import ClassificationTask, classification_as_experience
from replaylab.envs.gridworld import GridWorld
from replaylab.memory import BatchSpec, FifoBuffer, RankedStore, sample_batch
from replaylab.network import Objective, QNetwork
from replaylab.optim import OptimizerConfig, optimizer_step
from replaylab.strategies.base import SelectionStrategy

logger = logging.getLogger(__name__)

Task = GridWorld | ClassificationTask


@dataclass(frozen=True)
class AgentConfig:
    epsilon: float = 0.05
    gamma: float = DEFAULT_GAMMA
    batch: BatchSpec = field(default_factory=BatchSpec)
    fifo_capacity: int | None = 100
    episodic_capacity: int = 900
    train_every: int = 1
    eval_every: int = 250
    eval_episodes: int = 100
    objective: Objective = Objective.TD
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.episodic_capacity < 0:
            raise ValueError(f"episodic_capacity must be non-negative, got {self.episodic_capacity}")
        for name in ("train_every", "eval_every", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def fifo_only(self) -> bool:
        return self.episodic_capacity == 0


@dataclass
class EvalRecord:
    global_step: int
    training_task: int
    per_task_success: dict[int, float]
    per_task_mean_return: dict[int, float]
    max_td_error_seen: float
    loss_ma: float = 0.0

    @property
    def mean_success(self) -> float:
        return float(np.mean(list(self.per_task_success.values())))


@dataclass
class TrainResult:
    loss: float
    max_td_error: float


@dataclass
class EvalSummary:
    success: dict[int, float]
    mean_return: dict[int, float]


def select_action(net: QNetwork, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(net.num_outputs))
    return int(np.argmax(net.forward(state)))


def run_episode(
    env: GridWorld,
    net: QNetwork,
    cfg: AgentConfig,
    rng: np.random.Generator,
    *,
    start_index: int = 0,
    max_steps: int | None = None,
    on_step: Callable[[], None] | None = None,
) -> Trajectory:
    """Play one episode and attach discounted returns before anything reaches a buffer.

    `max_steps` can shorten the episode below the environment's own limit; a cut
    episode ends non-terminal like a timeout.
    """
    limit = env.max_steps if max_steps is None else min(max_steps, env.max_steps)
    state = env.reset(rng=rng)
    steps: list[tuple[np.ndarray, int, float, np.ndarray, bool]] = []
    for _ in range(limit):
        action = select_action(net, state, cfg.epsilon, rng)
        result = env.step(action)
        steps.append((state, action, result.reward, result.observation, result.terminal))
        state = result.observation
        if on_step is not None:
            on_step()
        if result.done:
            break

    rewards = [reward for _, _, reward, _, _ in steps]
    returns = discounted_returns(rewards, cfg.gamma)
    experiences = [
        Experience(
            state=s,
            action=a,
            reward=r,
            next_state=s2,
            terminal=terminal,
            ret=ret,
            task_id=env.task_id,
            step_index=start_index + i,
        )
        for i, ((s, a, r, s2, terminal), ret) in enumerate(zip(steps, returns))
    ]
    return Trajectory(experiences=experiences, episode_reward=float(sum(rewards)))


def absorb_trajectory(
    traj: Trajectory | Sequence[Experience],
    fifo: FifoBuffer,
    episodic: RankedStore | None,
    net: QNetwork | None = None,
    strategy: SelectionStrategy | None = None,
) -> None:
    """Insert every experience into the FIFO and offer each to the episodic store."""
    experiences = traj.experiences if isinstance(traj, Trajectory) else list(traj)
    for e in experiences:
        fifo.insert(e)
    if episodic is not None and experiences:
        (strategy or episodic.strategy).insert_all(episodic, experiences, net)


def train_step(
    net: QNetwork,
    fifo: FifoBuffer,
    episodic: RankedStore | None,
    cfg: AgentConfig,
    rng: np.random.Generator,
) -> TrainResult | None:
    """One sampled batch, one loss evaluation, one optimizer step; None when nothing is stored."""
    if len(fifo) == 0 and (episodic is None or len(episodic) == 0):
        logger.debug("train step skipped: both buffers empty")
        return None
    batch = sample_batch(fifo, episodic, cfg.batch, rng)
    loss, gradient, errors = net.loss_terms(batch, cfg.objective)
    optimizer_step(net, gradient, cfg.optimizer)
    return TrainResult(loss=loss, max_td_error=float(errors.max()))


def evaluate(
    net: QNetwork,
    envs: Sequence[Task],
    episodes_per_task: int,
    rng: np.random.Generator,
) -> EvalSummary:
    """Greedy evaluation on copies; never touches buffers or the optimizer."""
    if episodes_per_task < 1:
        raise ValueError(f"episodes_per_task must be >= 1, got {episodes_per_task}")
    success: dict[int, float] = {}
    mean_return: dict[int, float] = {}
    for env in envs:
        match env:
            case GridWorld():
                success[env.task_id], mean_return[env.task_id] = _evaluate_grid(
                    net, env, episodes_per_task, rng
                )
            case ClassificationTask():
                success[env.task_id], mean_return[env.task_id] = _evaluate_digits(net, env, episodes_per_task)
            case _:
                raise TypeError(f"Unknown task type: {type(env).__name__}")
    return EvalSummary(success=success, mean_return=mean_return)


def _evaluate_grid(
    net: QNetwork, env: GridWorld, episodes: int, rng: np.random.Generator
) -> tuple[float, float]:
    # all episodes advance in lockstep so each step is one batched forward pass
    worlds = [env.clone() for _ in range(episodes)]
    states = np.stack([w.reset(rng=rng) for w in worlds])
    totals = np.zeros(episodes)
    reached = np.zeros(episodes, dtype=bool)
    active = list(range(episodes))
    while active:
        actions = np.argmax(net.predict(states[active]), axis=1)
        still_active = []
        for i, action in zip(active, actions):
            result = worlds[i].step(int(action))
            totals[i] += result.reward
            states[i] = result.observation
            if result.terminal:
                reached[i] = True
            if not result.done:
                still_active.append(i)
        active = still_active
    return float(reached.mean()), float(totals.mean())


def _evaluate_digits(net: QNetwork, task: ClassificationTask, examples: int) -> tuple[float, float]:
    images = task.test.images[:examples]
    labels = task.test.labels[:examples]
    if len(labels) == 0:
        return 0.0, 0.0
    predicted = np.argmax(net.predict(images.reshape(len(images), -1)), axis=1)
    # rewards are omitted for classification, so the return column stays at zero
    return float(np.mean(predicted == labels)), 0.0


def _task_budget(env: Task) -> int:
    if isinstance(env, ClassificationTask):
        return env.iterations
    raise ValueError(f"task {env.task_id} has no step budget of its own; pass steps_per_task")


class Agent:
    """Trains one network through a sequence of tasks with FIFO plus episodic replay."""

    def __init__(
        self,
        net: QNetwork,
        cfg: AgentConfig,
        strategy: SelectionStrategy | None = None,
        seed: int = 0,
    ):
        self.net = net
        self.cfg = cfg
        self.fifo = FifoBuffer(cfg.fifo_capacity)
        self.episodic: RankedStore | None = None
        if cfg.episodic_capacity > 0:
            if strategy is None:
                raise ValueError("an episodic store needs a selection strategy")
            self.episodic = RankedStore(cfg.episodic_capacity, strategy)
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(seeds[0])
        self._eval_seed = int(seeds[1].generate_state(1)[0])
        self.global_step = 0
        self.td_trace: list[tuple[int, float]] = []
        self._losses: deque[float] = deque(maxlen=100)
        self._window_max_td = 0.0

    def evaluate(self, envs: Sequence[Task]) -> EvalSummary:
        """Evaluation with an RNG derived from the step count so training randomness is untouched."""
        rng = np.random.default_rng([self._eval_seed, self.global_step])
        return evaluate(self.net.copy(), envs, self.cfg.eval_episodes, rng)

    def train_lifelong(
        self,
        envs: Sequence[Task],
        steps_per_task: Sequence[int] | None = None,
        on_record: Callable[[EvalRecord], None] | None = None,
    ) -> list[EvalRecord]:
        """Train on each task in order; the buffers are never told where tasks change.

        Without `steps_per_task` every task trains for its own `iterations`.
        """
        if steps_per_task is None:
            steps_per_task = [_task_budget(env) for env in envs]
        if len(envs) != len(steps_per_task):
            raise ValueError(f"{len(envs)} tasks but {len(steps_per_task)} step budgets")
        records: list[EvalRecord] = []

        def record(training_task: int) -> None:
            summary = self.evaluate(envs)
            rec = EvalRecord(
                global_step=self.global_step,
                training_task=training_task,
                per_task_success=summary.success,
                per_task_mean_return=summary.mean_return,
                max_td_error_seen=self._window_max_td,
                loss_ma=float(np.mean(self._losses)) if self._losses else 0.0,
            )
            self._window_max_td = 0.0
            records.append(rec)
            logger.info(
                "step %d task %d success %s",
                rec.global_step,
                training_task,
                " ".join(f"{k}:{v:.2f}" for k, v in rec.per_task_success.items()),
            )
            if on_record is not None:
                on_record(rec)

        if envs:
            record(envs[0].task_id)
        for env, budget in zip(envs, steps_per_task):
            logger.info("training task %d for %d steps", env.task_id, budget)
            end = self.global_step + budget

            def on_step(task_id: int = env.task_id) -> None:
                self.global_step += 1
                if self.global_step % self.cfg.train_every == 0:
                    self._train()
                if self.global_step % self.cfg.eval_every == 0:
                    record(task_id)

            while self.global_step < end:
                match env:
                    case GridWorld():
                        traj = run_episode(
                            env,
                            self.net,
                            self.cfg,
                            self.rng,
                            start_index=self.global_step,
                            max_steps=end - self.global_step,
                            on_step=on_step,
                        )
                        absorb_trajectory(traj, self.fifo, self.episodic, self.net)
                    case ClassificationTask():
                        image, label = env.next_example(self.rng)
                        e = classification_as_experience(
                            image, label, env.num_actions, task_id=env.task_id, step_index=self.global_step
                        )
                        absorb_trajectory([e], self.fifo, self.episodic, self.net)
                        on_step()
                    case _:
                        raise TypeError(f"Unknown task type: {type(env).__name__}")

        if envs and (not records or records[-1].global_step != self.global_step):
            record(envs[-1].task_id)
        return records

    def _train(self) -> None:
        result = train_step(self.net, self.fifo, self.episodic, self.cfg, self.rng)
        if result is None:
            return
        self._losses.append(result.loss)
        self._window_max_td = max(self._window_max_td, result.max_td_error)
        self.td_trace.append((self.global_step, result.max_td_error))
