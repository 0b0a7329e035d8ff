"""Four-room 11x11 grid world; each task places the goal in a different room."""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from replaylab.core import Experience

GRID_SIZE = 11
WALL_LINE = 5
NUM_TASKS = 3
OBSERVATION_SHAPE = (GRID_SIZE, GRID_SIZE, 3)
WALL_CHANNEL, AGENT_CHANNEL, GOAL_CHANNEL = 0, 1, 2

# one opening in each half of the two wall lines
DOORWAYS: tuple[tuple[int, int], ...] = ((2, WALL_LINE), (8, WALL_LINE), (WALL_LINE, 2), (WALL_LINE, 8))

START_ROOM = (range(0, WALL_LINE), range(0, WALL_LINE))
# task id -> (rows, cols) of the goal room
TASK_ROOMS: dict[int, tuple[range, range]] = {
    0: (range(0, WALL_LINE), range(WALL_LINE + 1, GRID_SIZE)),  # top right
    1: (range(WALL_LINE + 1, GRID_SIZE), range(0, WALL_LINE)),  # bottom left
    2: (range(WALL_LINE + 1, GRID_SIZE), range(WALL_LINE + 1, GRID_SIZE)),  # bottom right
}


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


MOVES: dict[Action, tuple[int, int]] = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class EpisodeFinishedError(RuntimeError):
    def __init__(self) -> None:
        super().__init__("episode already finished; call reset()")


def wall_mask() -> np.ndarray:
    walls = np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)
    walls[WALL_LINE, :] = True
    walls[:, WALL_LINE] = True
    for r, c in DOORWAYS:
        walls[r, c] = False
    return walls


WALLS = wall_mask()


def open_cells() -> list[tuple[int, int]]:
    return [(r, c) for r in range(GRID_SIZE) for c in range(GRID_SIZE) if not WALLS[r, c]]


def start_cell() -> tuple[int, int]:
    return open_cells()[0]


def room_cells(task_id: int) -> list[tuple[int, int]]:
    if task_id not in TASK_ROOMS:
        raise ValueError(f"invalid task_id {task_id}; grid world tasks are 0..{NUM_TASKS - 1}")
    rows, cols = TASK_ROOMS[task_id]
    return [(r, c) for r in rows for c in cols if not WALLS[r, c] and (r, c) not in DOORWAYS]


def room_of(cell: tuple[int, int]) -> int | None:
    """Task id whose room contains `cell`, None for the start room and walls."""
    for task_id, (rows, cols) in TASK_ROOMS.items():
        if cell[0] in rows and cell[1] in cols:
            return task_id
    return None


def reachable_from(cell: tuple[int, int]) -> set[tuple[int, int]]:
    seen = {cell}
    frontier = deque([cell])
    while frontier:
        r, c = frontier.popleft()
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if 0 <= nr < GRID_SIZE and 0 <= nc < GRID_SIZE and not WALLS[nr, nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                frontier.append((nr, nc))
    return seen


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class GridWorld:
    """Deterministic four-room navigation task.

    Observations are three binary 11x11 channels (walls, agent, goal) flattened
    row-major in (row, col, channel) order.
    """

    num_actions = len(Action)
    observation_shape = OBSERVATION_SHAPE

    def __init__(
        self,
        task_id: int = 0,
        max_steps: int = 100,
        goal_reward: float = 1.0,
        step_cost: float = -0.01,
        seed: int | None = None,
    ):
        room_cells(task_id)
        self.task_id = task_id
        self.max_steps = max_steps
        self.goal_reward = goal_reward
        self.step_cost = step_cost
        self.rng = np.random.default_rng(seed)
        self.agent = start_cell()
        self.goal = room_cells(task_id)[0]
        self.steps = 0
        self.done = True

    @property
    def observation_size(self) -> int:
        return int(np.prod(OBSERVATION_SHAPE))

    def clone(self) -> GridWorld:
        return copy.deepcopy(self)

    def observation(self) -> np.ndarray:
        grid = np.zeros(OBSERVATION_SHAPE)
        grid[..., WALL_CHANNEL] = WALLS
        grid[self.agent[0], self.agent[1], AGENT_CHANNEL] = 1.0
        grid[self.goal[0], self.goal[1], GOAL_CHANNEL] = 1.0
        return grid.reshape(-1)

    def reset(self, task_id: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if task_id is not None:
            room_cells(task_id)
            self.task_id = task_id
        rng = rng if rng is not None else self.rng
        cells = room_cells(self.task_id)
        self.goal = cells[int(rng.integers(len(cells)))]
        self.agent = start_cell()
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeFinishedError()
        dr, dc = MOVES[Action(action)]
        r, c = self.agent[0] + dr, self.agent[1] + dc
        if 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE and not WALLS[r, c]:
            self.agent = (r, c)
        self.steps += 1

        if self.agent == self.goal:
            self.done = True
            return StepResult(self.observation(), self.goal_reward, terminal=True, truncated=False)
        truncated = self.steps >= self.max_steps
        self.done = truncated
        return StepResult(self.observation(), self.step_cost, terminal=False, truncated=truncated)


def grid_reset(world: GridWorld, task_id: int, rng: np.random.Generator) -> np.ndarray:
    return world.reset(task_id, rng)


def grid_step(world: GridWorld, action: int) -> StepResult:
    return world.step(action)


def decode_positions(observation: np.ndarray) -> tuple[tuple[int, int], tuple[int, int]]:
    """(agent, goal) coordinates encoded in a flattened observation."""
    grid = np.asarray(observation).reshape(OBSERVATION_SHAPE)
    agent = np.unravel_index(int(np.argmax(grid[..., AGENT_CHANNEL])), (GRID_SIZE, GRID_SIZE))
    goal = np.unravel_index(int(np.argmax(grid[..., GOAL_CHANNEL])), (GRID_SIZE, GRID_SIZE))
    return (int(agent[0]), int(agent[1])), (int(goal[0]), int(goal[1]))


def grid_state_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Manhattan distance between the agents plus Manhattan distance between the goals."""
    (agent_a, goal_a), (agent_b, goal_b) = decode_positions(a), decode_positions(b)
    return float(
        abs(agent_a[0] - agent_b[0])
        + abs(agent_a[1] - agent_b[1])
        + abs(goal_a[0] - goal_b[0])
        + abs(goal_a[1] - goal_b[1])
    )


def position_feature(e: Experience) -> np.ndarray:
    """[agent_row, agent_col, goal_row, goal_col]; L1 over it equals grid_state_distance."""
    agent, goal = decode_positions(e.state)
    return np.array([*agent, *goal], dtype=np.float64)
