import numpy as np
import pytest

from replaylab.envs.gridworld import (
    AGENT_CHANNEL,
    DOORWAYS,
    GOAL_CHANNEL,
    GRID_SIZE,
    OBSERVATION_SHAPE,
    WALLS,
    Action,
    EpisodeFinishedError,
    GridWorld,
    grid_reset,
    grid_state_distance,
    grid_step,
    open_cells,
    reachable_from,
    room_cells,
    room_of,
    start_cell,
    position_feature,
)
from conftest import make_experience


def _observation(agent, goal) -> np.ndarray:
    world = GridWorld(task_id=0)
    world.agent, world.goal = agent, goal
    return world.observation()


# ----------------------------------------------------------------------
# Layout
# ----------------------------------------------------------------------


def test_every_open_cell_is_reachable_from_start() -> None:
    assert reachable_from(start_cell()) == set(open_cells())


def test_exactly_four_doorways_in_the_wall_lines() -> None:
    openings = [(r, c) for r, c in open_cells() if r == 5 or c == 5]
    assert sorted(openings) == sorted(DOORWAYS)
    assert len(openings) == 4


@pytest.mark.parametrize("task_id", [0, 1, 2])
def test_each_goal_room_is_connected(task_id) -> None:
    cells = set(room_cells(task_id))
    start = next(iter(cells))
    seen, frontier = {start}, [start]
    while frontier:
        r, c = frontier.pop()
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if (nr, nc) in cells and (nr, nc) not in seen:
                seen.add((nr, nc))
                frontier.append((nr, nc))
    assert seen == cells
    assert all(room_of(cell) == task_id for cell in cells)


def test_start_is_top_left() -> None:
    assert start_cell() == (0, 0)
    assert room_of(start_cell()) is None


# ----------------------------------------------------------------------
# reset
# ----------------------------------------------------------------------


def test_reset_is_deterministic_per_seed() -> None:
    a = GridWorld(task_id=1, seed=42)
    b = GridWorld(task_id=1, seed=42)
    for _ in range(5):
        a.reset()
        b.reset()
        assert a.goal == b.goal


@pytest.mark.parametrize("task_id", [0, 1, 2])
def test_goal_always_in_task_room(task_id) -> None:
    world = GridWorld(task_id=task_id, seed=0)
    rng = np.random.default_rng(task_id)
    for _ in range(1000):
        grid_reset(world, task_id, rng)
        assert room_of(world.goal) == task_id
        assert not WALLS[world.goal]
        assert world.goal not in DOORWAYS


def test_observation_has_one_agent_and_one_goal(grid_world) -> None:
    obs = grid_world.reset().reshape(OBSERVATION_SHAPE)
    assert obs[..., AGENT_CHANNEL].sum() == 1.0
    assert obs[..., GOAL_CHANNEL].sum() == 1.0
    assert obs[0, 0, AGENT_CHANNEL] == 1.0
    assert np.array_equal(obs[..., 0].astype(bool), WALLS)


def test_reset_can_switch_task(grid_world) -> None:
    grid_world.reset(task_id=2)
    assert grid_world.task_id == 2
    assert room_of(grid_world.goal) == 2


@pytest.mark.parametrize("task_id", [-1, 3])
def test_invalid_task_rejected(task_id) -> None:
    with pytest.raises(ValueError, match="invalid task_id"):
        GridWorld(task_id=task_id)
    with pytest.raises(ValueError, match="invalid task_id"):
        GridWorld(task_id=0).reset(task_id=task_id)


# ----------------------------------------------------------------------
# step
# ----------------------------------------------------------------------


def test_bumping_a_wall_costs_a_step(grid_world) -> None:
    grid_world.reset()
    result = grid_step(grid_world, Action.UP)
    assert grid_world.agent == (0, 0)
    assert result.reward == grid_world.step_cost
    assert not result.terminal

    grid_world.agent = (4, 4)
    grid_step(grid_world, Action.RIGHT)
    assert grid_world.agent == (4, 4)


def test_doorway_lets_the_agent_through(grid_world) -> None:
    grid_world.reset()
    grid_world.agent = (2, 4)
    grid_step(grid_world, Action.RIGHT)
    assert grid_world.agent == (2, 5)


def test_stepping_onto_goal_ends_episode(grid_world) -> None:
    grid_world.reset()
    grid_world.agent, grid_world.goal = (0, 7), (0, 8)
    result = grid_step(grid_world, Action.RIGHT)
    assert result.terminal
    assert not result.truncated
    assert result.reward == grid_world.goal_reward
    with pytest.raises(EpisodeFinishedError):
        grid_step(grid_world, Action.LEFT)


def test_timeout_after_max_steps(grid_world) -> None:
    grid_world.reset()
    results = []
    for i in range(100):
        results.append(grid_step(grid_world, Action.UP if i % 2 else Action.LEFT))
    assert all(not r.done for r in results[:-1])
    assert results[-1].truncated
    assert not results[-1].terminal
    with pytest.raises(EpisodeFinishedError, match="reset"):
        grid_step(grid_world, Action.DOWN)


def test_step_before_reset_is_an_error() -> None:
    with pytest.raises(EpisodeFinishedError):
        GridWorld(task_id=0).step(Action.DOWN)


def test_episode_reward_is_bounded() -> None:
    rng = np.random.default_rng(3)
    world = GridWorld(task_id=0, seed=3)
    for _ in range(50):
        world.reset()
        total, done = 0.0, False
        while not done:
            result = world.step(int(rng.integers(4)))
            total += result.reward
            done = result.done
        assert world.max_steps * world.step_cost - 1e-9 <= total <= world.goal_reward


def test_clone_is_independent(grid_world) -> None:
    grid_world.reset()
    clone = grid_world.clone()
    clone.step(Action.DOWN)
    assert grid_world.agent == (0, 0)
    assert grid_world.steps == 0


# ----------------------------------------------------------------------
# Distances
# ----------------------------------------------------------------------


def test_identical_observations_are_at_distance_zero() -> None:
    obs = _observation((1, 1), (9, 9))
    assert grid_state_distance(obs, obs) == 0.0


def test_agent_moves_only() -> None:
    assert grid_state_distance(_observation((1, 1), (9, 9)), _observation((1, 3), (9, 9))) == 2.0


def test_agent_and_goal_distances_add() -> None:
    assert grid_state_distance(_observation((1, 1), (9, 9)), _observation((2, 2), (9, 6))) == 5.0


def test_position_feature_l1_matches_grid_distance() -> None:
    a = _observation((1, 1), (9, 9))
    b = _observation((2, 3), (7, 6))
    fa = position_feature(make_experience(state=a, size=GRID_SIZE))
    fb = position_feature(make_experience(state=b, size=GRID_SIZE))
    assert fa.tolist() == [1, 1, 9, 9]
    assert np.abs(fa - fb).sum() == grid_state_distance(a, b)
