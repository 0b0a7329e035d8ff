"""Success-rate curves per task over training, with training-task background bands."""

from __future__ import annotations

import logging
import pathlib
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from replaylab.reports import SchemaError, aggregate_metrics, read_metrics_csv  # noqa: E402

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 5
TASK_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")


def _training_bands(steps: np.ndarray, tasks: np.ndarray) -> list[tuple[float, float, int]]:
    """Contiguous (start, end, task) spans of the training_task column."""
    bands: list[tuple[float, float, int]] = []
    start = 0
    for i in range(1, len(tasks) + 1):
        if i == len(tasks) or tasks[i] != tasks[start]:
            end = steps[i] if i < len(tasks) else steps[-1]
            bands.append((float(steps[start]), float(end), int(tasks[start])))
            start = i
    return bands


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    return pd.Series(values).rolling(window, min_periods=1).mean().to_numpy()


def _load_aggregate(path: str | pathlib.Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if frame.empty:
        raise SchemaError(f"{path}: no data rows")
    if "global_step" not in frame.columns or not any(c.endswith("_std") for c in frame.columns):
        raise SchemaError(f"{path}: not an aggregate table")
    return frame


def plot_curves(
    csvs: Sequence[str | pathlib.Path],
    out: str | pathlib.Path,
    aggregate: str | pathlib.Path | None = None,
    smooth: bool = False,
    title: str | None = None,
) -> pathlib.Path:
    """Write an SVG with one success line per task.

    Several per-seed CSVs are drawn as their mean with a one-std envelope; an
    explicit aggregate file supplies the envelope instead.
    """
    if not csvs and aggregate is None:
        raise SchemaError("nothing to plot")

    if aggregate is not None:
        table = _load_aggregate(aggregate)
        envelope = True
    elif len(csvs) > 1:
        table = aggregate_metrics(csvs)
        envelope = True
    else:
        frame = read_metrics_csv(csvs[0])
        table = frame.rename(columns={c: f"{c}_mean" for c in frame.columns if c not in ("global_step", "training_task")})
        envelope = False

    task_ids = sorted(int(c.removeprefix("success_task_").removesuffix("_mean"))
                      for c in table.columns if c.startswith("success_task_") and c.endswith("_mean"))
    if not task_ids:
        raise SchemaError("no success_task columns")
    steps = table["global_step"].to_numpy(dtype=float)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for start, end, task in _training_bands(steps, table["training_task"].to_numpy()):
        ax.axvspan(start, end, color=TASK_COLORS[task % len(TASK_COLORS)], alpha=0.12, linewidth=0)

    for task in task_ids:
        color = TASK_COLORS[task % len(TASK_COLORS)]
        mean = table[f"success_task_{task}_mean"].to_numpy(dtype=float)
        label = f"task {task}"
        if smooth:
            mean = _smooth(mean, SMOOTHING_WINDOW)
            label += f" (moving avg, window {SMOOTHING_WINDOW})"
        ax.plot(steps, mean, color=color, label=label)
        if envelope:
            std = table[f"success_task_{task}_std"].to_numpy(dtype=float)
            if smooth:
                std = _smooth(std, SMOOTHING_WINDOW)
            ax.fill_between(steps, np.clip(mean - std, 0, 1), np.clip(mean + std, 0, 1), color=color, alpha=0.25)

    ax.set_xlim(steps[0], steps[-1] if steps[-1] > steps[0] else steps[0] + 1)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("global step")
    ax.set_ylabel("success rate")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()

    p = pathlib.Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, format="svg")
    plt.close(fig)
    logger.info("wrote %s", p)
    return p
