"""Experiment orchestration: one lifelong training run per seed, then cross-seed tables."""

from __future__ import annotations

import datetime as dt
import functools
import json
import logging
import pathlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from replaylab import __version__
from replaylab.agent import Agent, EvalRecord, Task
from replaylab.config import CoverageFeature, Domain, ExperimentConfig
from replaylab.core import experience_feature
from replaylab.envs.digits import build_tasks, load_dataset, load_mnist, synthetic_digits
from replaylab.envs.gridworld import GridWorld, position_feature
from replaylab.memory import composition_report
from replaylab.network import QNetwork
from replaylab.reports import (
    forgetting_score,
    write_aggregate_csv,
    write_composition_csv,
    write_metrics_csv,
    write_retention_csv,
)
from replaylab.snapshots import dump_buffer, save_network
from replaylab.strategies import SelectionStrategy, build_strategy

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
AGGREGATE_NAME = "aggregate.csv"
COMPOSITION_NAME = "composition.csv"
RETENTION_NAME = "retention.csv"


class RunError(RuntimeError):
    pass


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: dict[str, Any]
    version: str
    seeds: list[int]
    started_at: str
    files: list[str]


def seed_files(seed: int) -> dict[str, str]:
    return {
        "metrics": f"metrics_seed{seed}.csv",
        "td_trace": f"td_trace_seed{seed}.csv",
        "buffer": f"buffer_seed{seed}.json",
        "network": f"network_seed{seed}.json",
    }


def planned_files(seeds: list[int]) -> list[str]:
    files = [MANIFEST_NAME]
    for seed in seeds:
        files.extend(seed_files(seed).values())
    files.extend([AGGREGATE_NAME, COMPOSITION_NAME, RETENTION_NAME])
    return files


@dataclass
class SeedResult:
    seed: int
    records: list[EvalRecord]
    retention: dict[int, float]
    composition: dict[int, int]


@dataclass
class RunResult:
    output_dir: pathlib.Path
    manifest: RunManifest
    seeds: list[SeedResult]


# ----------------------------------------------------------------------
# Building blocks
# ----------------------------------------------------------------------


def build_tasks_for(cfg: ExperimentConfig, seed: int) -> list[Task]:
    env = cfg.env
    match cfg.domain:
        case Domain.GRIDWORLD:
            return [
                GridWorld(
                    task_id=t,
                    max_steps=env.max_steps,
                    goal_reward=env.goal_reward,
                    step_cost=env.step_cost,
                    seed=seed,
                )
                for t in env.tasks
            ]
        case Domain.CLASSIFICATION:
            if env.mnist_images and env.mnist_labels:
                data = load_dataset(env.mnist_images, env.mnist_labels)
                train, test = data.split(env.test_fraction, np.random.default_rng([seed, 8]))
            elif env.data_dir:
                train, test = load_mnist(env.data_dir)
            else:
                data = synthetic_digits(
                    np.random.default_rng([seed, 7]), per_class=env.synthetic_per_class, noise=env.synthetic_noise
                )
                train, test = data.split(env.test_fraction, np.random.default_rng([seed, 8]))
            tasks = build_tasks(train, test)
            return [replace(tasks[t], iterations=n) for t, n in zip(env.tasks, env.steps_per_task)]


def build_network(cfg: ExperimentConfig, seed: int) -> QNetwork:
    return QNetwork(cfg.observation_shape, cfg.layers(), leaky_slope=cfg.network.leaky_slope, seed=seed)


def build_selection(cfg: ExperimentConfig, seed: int) -> SelectionStrategy | None:
    kind = cfg.strategy.selection
    if kind is None:
        return None
    sel = cfg.selection
    match cfg.coverage_feature():
        case CoverageFeature.GRID_POSITIONS:
            feature_fn = position_feature
        case CoverageFeature.EXPERIENCE:
            feature_fn = functools.partial(experience_feature, num_actions=cfg.num_actions)
    return build_strategy(
        kind,
        seed=seed,
        feature_fn=feature_fn,
        metric=sel.coverage_metric,
        distance=sel.coverage_distance,
        reward_noise=sel.reward_noise,
        surprise_target=sel.surprise_target,
        surprise_order=sel.surprise_order,
        surprise_refresh=sel.surprise_refresh,
        objective=cfg.objective,
        gamma=cfg.agent.gamma,
    )


def build_agent(cfg: ExperimentConfig, seed: int) -> Agent:
    return Agent(build_network(cfg, seed), cfg.resolve_agent(), build_selection(cfg, seed), seed=seed)


# ----------------------------------------------------------------------
# Running
# ----------------------------------------------------------------------


def run_seed(cfg: ExperimentConfig, seed: int, out: pathlib.Path) -> SeedResult:
    """Train one seed and write its per-seed files into `out`."""
    logger.info("seed %d: %s on %s", seed, cfg.strategy.value, cfg.domain.value)
    tasks = build_tasks_for(cfg, seed)
    agent = build_agent(cfg, seed)
    # digit tasks carry their own budgets
    budgets = None if cfg.domain is Domain.CLASSIFICATION else cfg.env.steps_per_task
    records = agent.train_lifelong(tasks, budgets)

    names = seed_files(seed)
    write_metrics_csv(out / names["metrics"], records, cfg.env.tasks)
    pd.DataFrame(agent.td_trace, columns=["global_step", "max_td_error"]).to_csv(
        out / names["td_trace"], index=False, float_format="%.6g", lineterminator="\n"
    )
    buffer = agent.episodic if agent.episodic is not None else agent.fifo
    dump_buffer(buffer, out / names["buffer"])
    save_network(agent.net, out / names["network"])

    retention = forgetting_score(records)
    composition = composition_report(buffer)
    logger.info("seed %d done: retention %s composition %s", seed, retention, composition)
    return SeedResult(seed=seed, records=records, retention=retention, composition=composition)


def _run_seed_job(config_data: dict[str, Any], seed: int, out: str) -> SeedResult:
    return run_seed(ExperimentConfig.model_validate(config_data), seed, pathlib.Path(out))


def write_manifest(cfg: ExperimentConfig, out: pathlib.Path) -> RunManifest:
    manifest = RunManifest(
        config=cfg.snapshot(),
        version=__version__,
        seeds=list(cfg.seeds),
        started_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        files=planned_files(list(cfg.seeds)),
    )
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / MANIFEST_NAME).write_text(json.dumps(manifest.model_dump(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise RunError(f"output directory {out} is not writable: {exc.strerror or exc}") from None
    return manifest


def check_inventory(manifest: RunManifest, out: pathlib.Path) -> None:
    present = {p.name for p in out.iterdir() if p.is_file()}
    missing = sorted(set(manifest.files) - present)
    if missing:
        raise RunError(f"output inventory incomplete, missing {missing}")
    extra = sorted(present - set(manifest.files))
    if extra:
        logger.warning("files in %s not produced by this run: %s", out, extra)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, quick: bool = False) -> RunResult:
    """Train every seed, then write the aggregate, composition and retention tables."""
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    if quick:
        cfg = cfg.quick()
    out = cfg.resolve_output_dir()
    cfg = cfg.model_copy(update={"output_dir": str(out)})
    manifest = write_manifest(cfg, out)
    logger.info("writing %d files to %s", len(manifest.files), out)

    if jobs == 1 or len(cfg.seeds) == 1:
        results = [run_seed(cfg, seed, out) for seed in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cfg.seeds))) as ex:
            futures = [ex.submit(_run_seed_job, cfg.snapshot(), seed, str(out)) for seed in cfg.seeds]
            results = [f.result() for f in futures]

    write_aggregate_csv([out / seed_files(s)["metrics"] for s in cfg.seeds], out / AGGREGATE_NAME)
    write_composition_csv(out / COMPOSITION_NAME, {r.seed: r.composition for r in results}, cfg.env.tasks)
    write_retention_csv(out / RETENTION_NAME, {r.seed: r.retention for r in results})
    check_inventory(manifest, out)
    return RunResult(output_dir=out, manifest=manifest, seeds=results)
