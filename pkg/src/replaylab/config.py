"""Experiment configuration: TOML files with dotted keys validated by pydantic models."""

from __future__ import annotations

import os
import pathlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from replaylab.agent import AgentConfig
from replaylab.core import DEFAULT_GAMMA, Metric
from replaylab.envs import digits, gridworld
from replaylab.memory import BatchSpec
from replaylab.network import LayerSpec, Objective
from replaylab.optim import OptimizerConfig, OptimizerKind
from replaylab.strategies import DEFAULT_REWARD_NOISE, StrategyKind, SurpriseOrder, SurpriseTarget

OUTPUT_ENV_VAR = "REPLAYLAB_OUT"


class ConfigError(ValueError):
    """Invalid experiment configuration; `field` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class Domain(str, Enum):
    GRIDWORLD = "gridworld"
    CLASSIFICATION = "classification"


class StrategyName(str, Enum):
    FIFO_ONLY = "fifo-only"
    UNLIMITED = "unlimited"
    SURPRISE = "surprise"
    REWARD = "reward"
    MATCHING = "matching"
    COVERAGE = "coverage"
    SELECTIVE_ONLY = "selective-only"

    @property
    def selection(self) -> StrategyKind | None:
        """Episodic selection behind this name; None for the FIFO-only baselines."""
        match self:
            case StrategyName.FIFO_ONLY | StrategyName.UNLIMITED:
                return None
            case StrategyName.MATCHING | StrategyName.SELECTIVE_ONLY:
                return StrategyKind.RESERVOIR
            case _:
                return StrategyKind(self.value)


class CoverageFeature(str, Enum):
    EXPERIENCE = "experience"
    GRID_POSITIONS = "grid-positions"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AgentSettings(_Section):
    epsilon: float = Field(0.05, ge=0.0, le=1.0)
    gamma: float = Field(DEFAULT_GAMMA, gt=0.0, le=1.0)
    fifo_capacity: int = Field(100, gt=0)
    episodic_capacity: int = Field(900, ge=0)
    batch_total: int = Field(60, gt=0)
    batch_from_fifo: int = Field(30, ge=0)
    batch_from_episodic: int = Field(30, ge=0)
    train_every: int = Field(1, gt=0)
    eval_every: int = Field(250, gt=0)
    eval_episodes: int = Field(100, gt=0)


class NetworkSettings(_Section):
    # None picks the domain's default architecture
    layers: Optional[list[dict[str, Any]]] = None
    leaky_slope: float = Field(0.01, ge=0.0, lt=1.0)

    @field_validator("layers")
    @classmethod
    def _layers_parse(cls, value: list[dict[str, Any]] | None) -> list[dict[str, Any]] | None:
        if value is None:
            return None
        if not value:
            raise ValueError("at least one layer is required")
        for i, layer in enumerate(value):
            try:
                LayerSpec.from_dict(layer)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"layer {i}: {exc}") from None
        if value[-1].get("kind") != "output":
            raise ValueError("the last layer must be an output layer")
        return value


class OptimizerSettings(_Section):
    # None picks the domain default: RMSProp for control, plain gradient descent for classification
    kind: Optional[OptimizerKind] = None
    learning_rate: Optional[float] = Field(None, gt=0.0)
    decay: float = Field(0.95, gt=0.0, lt=1.0)
    epsilon: float = Field(1e-6, gt=0.0)


class SelectionSettings(_Section):
    surprise_target: SurpriseTarget = SurpriseTarget.RETURN
    surprise_order: SurpriseOrder = SurpriseOrder.MAX
    surprise_refresh: bool = False
    reward_noise: float = Field(DEFAULT_REWARD_NOISE, ge=0.0)
    coverage_feature: Optional[CoverageFeature] = None
    coverage_metric: Metric = Metric.L1
    coverage_distance: Optional[float] = Field(None, ge=0.0)


class EnvSettings(_Section):
    tasks: list[int] = Field(default_factory=lambda: [0, 1, 2])
    steps_per_task: list[int] = Field(default_factory=lambda: [10_000, 10_000, 10_000])
    max_steps: int = Field(100, gt=0)
    goal_reward: float = 1.0
    step_cost: float = -0.01
    data_dir: Optional[str] = None
    # explicit IDX pair, split into train and test by test_fraction
    mnist_images: Optional[str] = None
    mnist_labels: Optional[str] = None
    synthetic_per_class: int = Field(500, gt=0)
    synthetic_noise: float = Field(0.1, ge=0.0)
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)

    @field_validator("steps_per_task")
    @classmethod
    def _positive_steps(cls, value: list[int]) -> list[int]:
        if any(n <= 0 for n in value):
            raise ValueError("every task needs a positive step count")
        return value

    @field_validator("steps_per_task")
    @classmethod
    def _one_budget_per_task(cls, value: list[int], info: ValidationInfo) -> list[int]:
        tasks = info.data.get("tasks")
        if tasks is not None and len(tasks) != len(value):
            raise ValueError(f"{len(tasks)} tasks but {len(value)} step counts")
        return value

    @model_validator(mode="after")
    def _idx_pair(self) -> EnvSettings:
        if (self.mnist_images is None) != (self.mnist_labels is None):
            raise ValueError("mnist_images and mnist_labels must be given together")
        return self


class ExperimentConfig(_Section):
    name: str = "experiment"
    domain: Domain = Domain.GRIDWORLD
    strategy: StrategyName = StrategyName.MATCHING
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    output_dir: Optional[str] = None
    quick_steps_per_task: int = Field(3000, gt=0)
    agent: AgentSettings = Field(default_factory=AgentSettings)
    network: NetworkSettings = Field(default_factory=NetworkSettings)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    selection: SelectionSettings = Field(default_factory=SelectionSettings)
    env: EnvSettings = Field(default_factory=EnvSettings)

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, value: list[int]) -> list[int]:
        if len(set(value)) != len(value):
            raise ValueError("seeds must be distinct")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> ExperimentConfig:
        limit = gridworld.NUM_TASKS if self.domain is Domain.GRIDWORLD else digits.NUM_TASKS
        for task in self.env.tasks:
            if not 0 <= task < limit:
                raise ValueError(f"env.tasks: task {task} does not exist in {self.domain.value} (0..{limit - 1})")
        if self.layers()[-1].width != self.num_actions:
            raise ValueError(f"network.layers: output width must be {self.num_actions} for {self.domain.value}")
        if self.strategy.selection is not None and self.agent.episodic_capacity == 0:
            raise ValueError(f"agent.episodic_capacity: {self.strategy.value} needs an episodic store")
        a = self.agent
        # single-buffer strategies ignore the split
        uses_split = self.strategy.selection is not None and self.strategy is not StrategyName.SELECTIVE_ONLY
        if uses_split and a.batch_from_fifo + a.batch_from_episodic != a.batch_total:
            raise ValueError(
                "agent.batch_from_episodic: batch_from_fifo + batch_from_episodic "
                f"({a.batch_from_fifo} + {a.batch_from_episodic}) != batch_total ({a.batch_total})"
            )
        return self

    # ------------------------------------------------------------------
    # Resolution into runtime objects
    # ------------------------------------------------------------------

    @property
    def num_actions(self) -> int:
        return len(gridworld.Action) if self.domain is Domain.GRIDWORLD else digits.NUM_CLASSES

    @property
    def observation_shape(self) -> tuple[int, int, int]:
        return gridworld.OBSERVATION_SHAPE if self.domain is Domain.GRIDWORLD else digits.OBSERVATION_SHAPE

    @property
    def objective(self) -> Objective:
        return Objective.TD if self.domain is Domain.GRIDWORLD else Objective.CROSS_ENTROPY

    def layers(self) -> list[LayerSpec]:
        if self.network.layers is not None:
            return [LayerSpec.from_dict(layer) for layer in self.network.layers]
        kernels = (6, 3) if self.domain is Domain.GRIDWORLD else (5, 5)
        return [
            LayerSpec.conv2d(32, kernels[0], 2),
            LayerSpec.conv2d(64, kernels[1], 2),
            LayerSpec.dense(100),
            LayerSpec.output(self.num_actions),
        ]

    def optimizer_config(self) -> OptimizerConfig:
        opt = self.optimizer
        if self.domain is Domain.GRIDWORLD:
            kind, lr = OptimizerKind.RMSPROP, 2.5e-4
        else:
            kind, lr = OptimizerKind.SGD, 0.05
        return OptimizerConfig(
            kind=opt.kind or kind,
            learning_rate=opt.learning_rate or lr,
            decay=opt.decay,
            epsilon=opt.epsilon,
        )

    def coverage_feature(self) -> CoverageFeature:
        if self.selection.coverage_feature is not None:
            return self.selection.coverage_feature
        return CoverageFeature.GRID_POSITIONS if self.domain is Domain.GRIDWORLD else CoverageFeature.EXPERIENCE

    def resolve_agent(self) -> AgentConfig:
        """Runtime agent settings; the strategy name decides buffer sizes and batch split."""
        a = self.agent
        batch = BatchSpec(a.batch_total, a.batch_from_fifo, a.batch_from_episodic)
        fifo_capacity: int | None = a.fifo_capacity
        episodic_capacity = a.episodic_capacity
        match self.strategy:
            case StrategyName.FIFO_ONLY:
                fifo_capacity, episodic_capacity = a.fifo_capacity + a.episodic_capacity, 0
                batch = BatchSpec(a.batch_total, a.batch_total, 0)
            case StrategyName.UNLIMITED:
                fifo_capacity, episodic_capacity = None, 0
                batch = BatchSpec(a.batch_total, a.batch_total, 0)
            case StrategyName.SELECTIVE_ONLY:
                batch = BatchSpec(a.batch_total, 0, a.batch_total)
        return AgentConfig(
            epsilon=a.epsilon,
            gamma=a.gamma,
            batch=batch,
            fifo_capacity=fifo_capacity,
            episodic_capacity=episodic_capacity,
            train_every=a.train_every,
            eval_every=a.eval_every,
            eval_episodes=a.eval_episodes,
            objective=self.objective,
            optimizer=self.optimizer_config(),
        )

    def resolve_output_dir(self) -> pathlib.Path:
        """`REPLAYLAB_OUT` wins over the file; the fallback is runs/<name>."""
        override = os.getenv(OUTPUT_ENV_VAR)
        if override:
            return pathlib.Path(override)
        if self.output_dir:
            return pathlib.Path(self.output_dir)
        return pathlib.Path("runs") / self.name

    def quick(self) -> ExperimentConfig:
        """Same experiment with every task capped at `quick_steps_per_task` steps."""
        steps = [min(n, self.quick_steps_per_task) for n in self.env.steps_per_task]
        return self.model_copy(update={"env": self.env.model_copy(update={"steps_per_task": steps})})

    def snapshot(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def _dotted(loc: tuple[int | str, ...]) -> str:
    return ".".join(str(part) for part in loc)


def _nest_dotted(data: dict[str, Any]) -> dict[str, Any]:
    """Expand top-level keys like "agent.epsilon" that arrive quoted into nested tables."""
    nested: dict[str, Any] = {}
    for key, value in data.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "conflicts with a scalar of the same name")
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return nested


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(_nest_dotted(data))
    except ValidationError as exc:
        err = exc.errors()[0]
        field, message = _dotted(err["loc"]), err["msg"].removeprefix("Value error, ")
        if not field and ": " in message:
            # whole-model checks prefix their message with the field they concern
            field, message = message.split(": ", 1)
        raise ConfigError(field, message) from None


def load_config(path: str | pathlib.Path) -> ExperimentConfig:
    p = pathlib.Path(path)
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{p}: {exc}") from None
    return config_from_dict(data)
