"""Metrics tables: per-seed CSVs, cross-seed aggregates, retention and buffer composition."""

from __future__ import annotations

import pathlib
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from replaylab.agent import EvalRecord

METRICS_FLOAT_FORMAT = "%.6g"
AGGREGATE_FLOAT_FORMAT = "%.15g"
LEAD_COLUMNS = ("global_step", "training_task")
TAIL_COLUMNS = ("max_td_error", "loss_ma")


class SchemaError(ValueError):
    pass


def metrics_columns(task_ids: Sequence[int]) -> list[str]:
    return [
        *LEAD_COLUMNS,
        *(f"success_task_{t}" for t in task_ids),
        *(f"return_task_{t}" for t in task_ids),
        *TAIL_COLUMNS,
    ]


def task_ids_from_columns(columns: Iterable[str]) -> list[int]:
    return [int(c.removeprefix("success_task_")) for c in columns if c.startswith("success_task_")]


def check_metrics_schema(frame: pd.DataFrame, source: str = "metrics") -> list[int]:
    """Validate a metrics table and return its task ids."""
    columns = list(frame.columns)
    task_ids = task_ids_from_columns(columns)
    if not task_ids or columns != metrics_columns(task_ids):
        raise SchemaError(f"{source}: unexpected columns {columns}")
    if frame.empty:
        raise SchemaError(f"{source}: no data rows")
    return task_ids


def metrics_frame(records: Sequence[EvalRecord], task_ids: Sequence[int]) -> pd.DataFrame:
    rows = []
    for rec in records:
        row: dict[str, float | int] = {"global_step": rec.global_step, "training_task": rec.training_task}
        row.update({f"success_task_{t}": rec.per_task_success[t] for t in task_ids})
        row.update({f"return_task_{t}": rec.per_task_mean_return[t] for t in task_ids})
        row.update(max_td_error=rec.max_td_error_seen, loss_ma=rec.loss_ma)
        rows.append(row)
    return pd.DataFrame(rows, columns=metrics_columns(task_ids))


def write_metrics_csv(
    path: str | pathlib.Path, records: Sequence[EvalRecord], task_ids: Sequence[int]
) -> pathlib.Path:
    p = pathlib.Path(path)
    metrics_frame(records, task_ids).to_csv(p, index=False, float_format=METRICS_FLOAT_FORMAT, lineterminator="\n")
    return p


def read_metrics_csv(path: str | pathlib.Path) -> pd.DataFrame:
    p = pathlib.Path(path)
    try:
        frame = pd.read_csv(p)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{p}: no header row") from None
    check_metrics_schema(frame, str(p))
    return frame


def records_from_frame(frame: pd.DataFrame) -> list[EvalRecord]:
    task_ids = check_metrics_schema(frame)
    return [
        EvalRecord(
            global_step=int(row["global_step"]),
            training_task=int(row["training_task"]),
            per_task_success={t: float(row[f"success_task_{t}"]) for t in task_ids},
            per_task_mean_return={t: float(row[f"return_task_{t}"]) for t in task_ids},
            max_td_error_seen=float(row["max_td_error"]),
            loss_ma=float(row["loss_ma"]),
        )
        for _, row in frame.iterrows()
    ]


def forgetting_score(records: Sequence[EvalRecord]) -> dict[int, float]:
    """Retention per task: final success over the peak success seen while that task was trained.

    A task whose peak is 0, or that was never trained, scores 1 since there is
    nothing to forget. Values are clipped to [0, 1].
    """
    if not records:
        return {}
    final = records[-1].per_task_success
    retention: dict[int, float] = {}
    for task in final:
        peak = max(
            (rec.per_task_success[task] for rec in records if rec.training_task == task),
            default=0.0,
        )
        retention[task] = 1.0 if peak <= 0.0 else float(np.clip(final[task] / peak, 0.0, 1.0))
    return retention


def aggregate_metrics(paths: Sequence[str | pathlib.Path]) -> pd.DataFrame:
    """Mean and sample std of every metrics column per global_step across seed files.

    A single seed gets std 0.
    """
    if not paths:
        raise SchemaError("no metrics files to aggregate")
    frames = [read_metrics_csv(p) for p in paths]
    columns = list(frames[0].columns)
    for p, frame in zip(paths[1:], frames[1:]):
        if list(frame.columns) != columns:
            raise SchemaError(f"{p}: schema mismatch with {paths[0]}")
    stacked = pd.concat(frames, ignore_index=True)
    values = [c for c in columns if c not in LEAD_COLUMNS]
    grouped = stacked.groupby("global_step", sort=True)
    mean = grouped[values].mean()
    std = grouped[values].std(ddof=1).fillna(0.0) if len(frames) > 1 else mean * 0.0
    out = pd.DataFrame({"global_step": mean.index, "training_task": grouped["training_task"].first().to_numpy()})
    for c in values:
        out[f"{c}_mean"] = mean[c].to_numpy()
        out[f"{c}_std"] = std[c].to_numpy()
    out["seeds"] = grouped.size().to_numpy()
    return out


def write_aggregate_csv(paths: Sequence[str | pathlib.Path], out: str | pathlib.Path) -> pathlib.Path:
    p = pathlib.Path(out)
    aggregate_metrics(paths).to_csv(p, index=False, float_format=AGGREGATE_FLOAT_FORMAT, lineterminator="\n")
    return p


def write_retention_csv(
    path: str | pathlib.Path, retention_by_seed: dict[int, dict[int, float]]
) -> pathlib.Path:
    rows = [
        {"seed": seed, "task_id": task, "retention": value}
        for seed, per_task in sorted(retention_by_seed.items())
        for task, value in sorted(per_task.items())
    ]
    p = pathlib.Path(path)
    pd.DataFrame(rows, columns=["seed", "task_id", "retention"]).to_csv(
        p, index=False, float_format=METRICS_FLOAT_FORMAT, lineterminator="\n"
    )
    return p


def write_composition_csv(
    path: str | pathlib.Path, composition_by_seed: dict[int, dict[int, int]], task_ids: Sequence[int]
) -> pathlib.Path:
    """One row per (seed, task); tasks with nothing stored get an explicit 0."""
    rows = [
        {"seed": seed, "task_id": task, "count": counts.get(task, 0)}
        for seed, counts in sorted(composition_by_seed.items())
        for task in task_ids
    ]
    p = pathlib.Path(path)
    pd.DataFrame(rows, columns=["seed", "task_id", "count"]).to_csv(p, index=False, lineterminator="\n")
    return p
