"""Parameter updates on a QNetwork's flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from replaylab.network import QNetwork


class OptimizerKind(str, Enum):
    RMSPROP = "rmsprop"
    SGD = "sgd"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.RMSPROP
    learning_rate: float = 2.5e-4
    decay: float = 0.95
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"rmsprop decay must lie in (0, 1), got {self.decay}")
        if self.epsilon <= 0:
            raise ValueError(f"rmsprop epsilon must be positive, got {self.epsilon}")


def optimizer_step(net: QNetwork, gradient: np.ndarray, cfg: OptimizerConfig) -> None:
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != net.params.shape:
        raise ValueError(f"gradient length {gradient.size} != parameter count {net.parameter_count}")

    match cfg.kind:
        case OptimizerKind.SGD:
            net.params -= cfg.learning_rate * gradient
        case OptimizerKind.RMSPROP:
            acc = net.optimizer_state
            acc *= cfg.decay
            acc += (1.0 - cfg.decay) * gradient**2
            net.params -= cfg.learning_rate * gradient / np.sqrt(acc + cfg.epsilon)
