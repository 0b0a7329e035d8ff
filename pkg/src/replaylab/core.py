"""Shared domain types: experiences, trajectories, discounted returns and distance metrics."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

DEFAULT_GAMMA = 0.95

# task_id value handed to selection strategies so they cannot key on the task
TASK_MASKED = -1


class EmptyTrajectoryError(ValueError):
    def __init__(self) -> None:
        super().__init__("empty trajectory")


class InvalidDiscountError(ValueError):
    def __init__(self, gamma: float) -> None:
        super().__init__(f"invalid discount: {gamma!r}")


class UndefinedSimilarityError(ValueError):
    def __init__(self, metric: "Metric") -> None:
        super().__init__(f"undefined similarity ({metric.value} of all-zero vectors)")


def _frozen_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Experience:
    """One transition plus its precomputed discounted return.

    `ret` is the return from this step to the end of the episode and `step_index`
    is the global collection time of the step.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    ret: float
    task_id: int
    step_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", _frozen_vector(self.state))
        object.__setattr__(self, "next_state", _frozen_vector(self.next_state))
        if self.state.shape != self.next_state.shape:
            raise ValueError(
                f"state and next_state lengths differ: {self.state.size} != {self.next_state.size}"
            )
        if self.action < 0:
            raise ValueError(f"action must be non-negative, got {self.action}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Experience):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and self.terminal == other.terminal
            and self.ret == other.ret
            and self.task_id == other.task_id
            and self.step_index == other.step_index
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.next_state, other.next_state)
        )

    __hash__ = object.__hash__

    def masked(self) -> Experience:
        """Copy with the task label hidden, for task-agnostic consumers."""
        return dataclasses.replace(self, task_id=TASK_MASKED)

    def with_return(self, ret: float) -> Experience:
        return dataclasses.replace(self, ret=float(ret))


@dataclass
class Trajectory:
    experiences: list[Experience] = field(default_factory=list)
    episode_reward: float = 0.0

    def __len__(self) -> int:
        return len(self.experiences)

    @property
    def reached_terminal(self) -> bool:
        return bool(self.experiences) and self.experiences[-1].terminal

    def validate(self, max_steps: int | None = None) -> None:
        for e in self.experiences[:-1]:
            if e.terminal:
                raise ValueError("terminal experience before the end of the trajectory")
        if max_steps is not None and len(self.experiences) > max_steps:
            raise ValueError(f"trajectory longer than {max_steps} steps")


class Metric(str, Enum):
    L1 = "l1"
    L2 = "l2"
    COSINE = "cosine"
    EXTENDED_JACCARD = "extended-jaccard"


def discounted_returns(rewards: Sequence[float], gamma: float = DEFAULT_GAMMA) -> list[float]:
    """Backward recursion R_i = r_i + gamma * R_{i+1}, with R_last = r_last."""
    if len(rewards) == 0:
        raise EmptyTrajectoryError()
    if not 0.0 < gamma <= 1.0:
        raise InvalidDiscountError(gamma)
    out = [0.0] * len(rewards)
    running = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        running = float(rewards[i]) + gamma * running
        out[i] = running
    return out


def distance(metric: Metric, x: np.ndarray | Sequence[float], y: np.ndarray | Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} != {y.size}")

    match Metric(metric):
        case Metric.L1:
            return float(np.abs(x - y).sum())
        case Metric.L2:
            return float(np.sqrt(((x - y) ** 2).sum()))
        case Metric.COSINE:
            nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
            if nx == 0.0 or ny == 0.0:
                if nx == ny:
                    raise UndefinedSimilarityError(Metric.COSINE)
                return 1.0
            return max(0.0, 1.0 - float(x @ y) / (nx * ny))
        case Metric.EXTENDED_JACCARD:
            dot = float(x @ y)
            denom = float(x @ x) + float(y @ y) - dot
            if denom == 0.0:
                raise UndefinedSimilarityError(Metric.EXTENDED_JACCARD)
            return max(0.0, 1.0 - dot / denom)


def pairwise_distances(metric: Metric, points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Distances from `query` to every row of `points`, vectorized form of `distance`."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    query = np.asarray(query, dtype=np.float64)
    if points.shape[1] != query.size:
        raise ValueError(f"length mismatch: {points.shape[1]} != {query.size}")

    match Metric(metric):
        case Metric.L1:
            return np.abs(points - query).sum(axis=1)
        case Metric.L2:
            return np.sqrt(((points - query) ** 2).sum(axis=1))
        case Metric.COSINE:
            norms = np.linalg.norm(points, axis=1)
            qn = float(np.linalg.norm(query))
            both_zero = (norms == 0.0) & (qn == 0.0)
            if both_zero.any():
                raise UndefinedSimilarityError(Metric.COSINE)
            with np.errstate(divide="ignore", invalid="ignore"):
                sim = np.where((norms == 0.0) | (qn == 0.0), 0.0, points @ query / (norms * qn))
            return np.maximum(0.0, 1.0 - sim)
        case Metric.EXTENDED_JACCARD:
            dots = points @ query
            denom = (points * points).sum(axis=1) + float(query @ query) - dots
            if (denom == 0.0).any():
                raise UndefinedSimilarityError(Metric.EXTENDED_JACCARD)
            return np.maximum(0.0, 1.0 - dots / denom)


def experience_feature(e: Experience, num_actions: int) -> np.ndarray:
    """[state | one-hot(action) | next_state | reward]."""
    if e.action >= num_actions:
        raise ValueError(f"action {e.action} out of range for {num_actions} actions")
    one_hot = np.zeros(num_actions)
    one_hot[e.action] = 1.0
    return np.concatenate([e.state, one_hot, e.next_state, [e.reward]])
