import hypothesis
import numpy as np
import pytest
from dotenv import load_dotenv

from replaylab.core import Experience
from replaylab.envs.gridworld import OBSERVATION_SHAPE, GridWorld
from replaylab.network import LayerSpec, QNetwork

load_dotenv()  # Load environment variables from .env file

hypothesis.settings.register_profile(
    "replaylab", deadline=None, suppress_health_check=[hypothesis.HealthCheck.function_scoped_fixture]
)
hypothesis.settings.load_profile("replaylab")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-length experiment tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    # a developer's .env must not redirect test outputs
    monkeypatch.delenv("REPLAYLAB_OUT", raising=False)
    monkeypatch.delenv("REPLAYLAB_PRESETS_DIR", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_experience(
    step_index=0,
    task_id=0,
    ret=0.0,
    reward=0.0,
    action=0,
    state=None,
    size=4,
    terminal=False,
):
    state = np.full(size, float(step_index)) if state is None else np.asarray(state, dtype=float)
    return Experience(
        state=state,
        action=action,
        reward=reward,
        next_state=state + 1.0,
        terminal=terminal,
        ret=ret,
        task_id=task_id,
        step_index=step_index,
    )


@pytest.fixture
def experience_factory():
    return make_experience


def small_grid_layers():
    return [LayerSpec.conv2d(4, 3, 2), LayerSpec.dense(16), LayerSpec.output(4)]


@pytest.fixture
def small_grid_net():
    return QNetwork(OBSERVATION_SHAPE, small_grid_layers(), seed=0)


@pytest.fixture
def grid_world():
    return GridWorld(task_id=0, seed=0)
