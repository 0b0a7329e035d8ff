"""JSON snapshots of replay buffers and network checkpoints.

Floats are written with Python's shortest round-trip repr, so a snapshot reloads
bit-for-bit.
"""

from __future__ import annotations

import json
import pathlib
from collections import Counter
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from replaylab.core import Experience
from replaylab.memory import FifoBuffer, RankedStore
from replaylab.network import LayerSpec, QNetwork

BUFFER_FORMAT = "replaylab-buffer/1"
NETWORK_FORMAT = "replaylab-network/1"

RECORD_COLUMNS = ["task_id", "step_index", "rank", "action", "reward", "ret", "terminal", "state", "next_state"]


class SnapshotError(ValueError):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BufferRecord(_Model):
    task_id: int
    step_index: int
    rank: Optional[float] = None
    action: int
    reward: float
    ret: float
    terminal: bool
    state: list[float]
    next_state: list[float]

    @classmethod
    def from_experience(cls, e: Experience, rank: float | None = None) -> BufferRecord:
        return cls(
            task_id=e.task_id,
            step_index=e.step_index,
            rank=rank,
            action=e.action,
            reward=e.reward,
            ret=e.ret,
            terminal=e.terminal,
            state=e.state.tolist(),
            next_state=e.next_state.tolist(),
        )

    def to_experience(self) -> Experience:
        return Experience(
            state=np.array(self.state),
            action=self.action,
            reward=self.reward,
            next_state=np.array(self.next_state),
            terminal=self.terminal,
            ret=self.ret,
            task_id=self.task_id,
            step_index=self.step_index,
        )


class BufferSnapshot(_Model):
    format: Literal["replaylab-buffer/1"] = BUFFER_FORMAT
    kind: Literal["episodic", "fifo"]
    capacity: Optional[int]
    strategy: Optional[str] = None
    records: list[BufferRecord]

    def experiences(self) -> list[Experience]:
        return [record.to_experience() for record in self.records]


class NetworkCheckpoint(_Model):
    format: Literal["replaylab-network/1"] = NETWORK_FORMAT
    network: dict
    parameters: list[float]
    optimizer_state: list[float]


def snapshot_buffer(buffer: RankedStore | FifoBuffer) -> BufferSnapshot:
    """Episodic stores list entries weakest first; FIFOs list oldest first."""
    if isinstance(buffer, RankedStore):
        return BufferSnapshot(
            kind="episodic",
            capacity=buffer.capacity,
            strategy=buffer.strategy.kind.value,
            records=[BufferRecord.from_experience(entry.experience, entry.rank) for entry in buffer],
        )
    return BufferSnapshot(
        kind="fifo",
        capacity=buffer.capacity,
        records=[BufferRecord.from_experience(e) for e in buffer],
    )


def _write_json(path: str | pathlib.Path, payload: dict) -> pathlib.Path:
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return p


def _read_json(path: str | pathlib.Path) -> dict:
    p = pathlib.Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SnapshotError(f"snapshot not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{p} is not valid JSON: {exc}") from None


def _validation_message(exc: ValidationError) -> str:
    err = exc.errors()[0]
    return f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}"


def dump_buffer(buffer: RankedStore | FifoBuffer, path: str | pathlib.Path) -> pathlib.Path:
    return _write_json(path, snapshot_buffer(buffer).model_dump())


def load_buffer(path: str | pathlib.Path) -> BufferSnapshot:
    try:
        return BufferSnapshot.model_validate(_read_json(path))
    except ValidationError as exc:
        raise SnapshotError(f"bad buffer snapshot: {_validation_message(exc)}") from None


def records_frame(records: list[BufferRecord]) -> pd.DataFrame:
    """One row per record; state vectors are JSON lists."""
    rows = []
    for record in records:
        row = record.model_dump()
        row["state"] = json.dumps(row["state"])
        row["next_state"] = json.dumps(row["next_state"])
        rows.append(row)
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def records_to_csv(records: list[BufferRecord], path: str | pathlib.Path | None = None) -> str | None:
    """CSV with 17 significant digits, so every float parses back to the same double."""
    return records_frame(records).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_records_csv(path: str | pathlib.Path) -> list[BufferRecord]:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise SnapshotError(f"record file not found: {path}") from None
    if list(frame.columns) != RECORD_COLUMNS:
        raise SnapshotError(f"{path}: expected columns {','.join(RECORD_COLUMNS)}")
    try:
        return [
            BufferRecord(
                task_id=int(row.task_id),
                step_index=int(row.step_index),
                rank=None if pd.isna(row.rank) else float(row.rank),
                action=int(row.action),
                reward=float(row.reward),
                ret=float(row.ret),
                terminal=bool(row.terminal),
                state=json.loads(row.state),
                next_state=json.loads(row.next_state),
            )
            for row in frame.itertuples(index=False)
        ]
    except (ValidationError, ValueError, TypeError) as exc:
        raise SnapshotError(f"{path}: bad record: {exc}") from None


def buffer_report(snapshot: BufferSnapshot) -> dict:
    """Composition and rank summary of a stored buffer."""
    counts = Counter(record.task_id for record in snapshot.records)
    ranks = [record.rank for record in snapshot.records if record.rank is not None]
    report = {
        "kind": snapshot.kind,
        "strategy": snapshot.strategy,
        "capacity": snapshot.capacity,
        "size": len(snapshot.records),
        "per_task": dict(sorted(counts.items())),
    }
    if ranks:
        report["rank_min"] = min(ranks)
        report["rank_max"] = max(ranks)
        report["rank_mean"] = float(np.mean(ranks))
    return report


def save_network(net: QNetwork, path: str | pathlib.Path) -> pathlib.Path:
    checkpoint = NetworkCheckpoint(
        network=net.describe(),
        parameters=net.params.tolist(),
        optimizer_state=net.optimizer_state.tolist(),
    )
    return _write_json(path, checkpoint.model_dump())


def load_network(path: str | pathlib.Path) -> QNetwork:
    try:
        checkpoint = NetworkCheckpoint.model_validate(_read_json(path))
    except ValidationError as exc:
        raise SnapshotError(f"bad network checkpoint: {_validation_message(exc)}") from None
    spec = checkpoint.network
    try:
        net = QNetwork(
            input_shape=tuple(spec["input_shape"]),
            layers=[LayerSpec.from_dict(layer) for layer in spec["layers"]],
            leaky_slope=spec.get("leaky_slope", 0.01),
            seed=None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"bad network description: {exc}") from None
    if len(checkpoint.parameters) != net.parameter_count:
        raise SnapshotError(
            f"checkpoint has {len(checkpoint.parameters)} parameters, architecture needs {net.parameter_count}"
        )
    if len(checkpoint.optimizer_state) != net.parameter_count:
        raise SnapshotError("optimizer state length does not match the parameter count")
    net.params[:] = checkpoint.parameters
    net.optimizer_state[:] = checkpoint.optimizer_state
    return net
