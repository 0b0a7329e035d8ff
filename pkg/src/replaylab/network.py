"""Minimal numpy Q-network: strided valid convolutions, dense layers, leaky ReLU.

Parameters live in a single flat vector so optimizers and the finite-difference
checker can treat the network as a function of one array.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from replaylab.core import Experience

logger = logging.getLogger(__name__)

DEFAULT_LEAKY_SLOPE = 0.01


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    DENSE = "dense"
    OUTPUT = "output"


class Activation(str, Enum):
    LEAKY_RELU = "leaky-relu"
    LINEAR = "linear"


class Objective(str, Enum):
    TD = "td"
    CROSS_ENTROPY = "cross-entropy"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    filters: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    width: int = 0
    activation: Activation = Activation.LEAKY_RELU

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.kind is LayerKind.OUTPUT and self.activation is not Activation.LINEAR:
            raise ValueError("output layer activation must be linear")
        if self.kind is LayerKind.CONV2D:
            if self.filters <= 0:
                raise ValueError(f"conv2d filters must be positive, got {self.filters}")
            if len(self.kernel) != 2 or min(self.kernel) <= 0 or self.stride <= 0:
                raise ValueError(f"kernel and stride must be positive, got {self.kernel}/{self.stride}")
        elif self.width <= 0:
            raise ValueError(f"{self.kind.value} width must be positive, got {self.width}")

    @classmethod
    def conv2d(cls, filters: int, kernel: int | tuple[int, int], stride: int) -> LayerSpec:
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        return cls(LayerKind.CONV2D, filters=filters, kernel=kernel, stride=stride)

    @classmethod
    def dense(cls, width: int) -> LayerSpec:
        return cls(LayerKind.DENSE, width=width)

    @classmethod
    def output(cls, width: int) -> LayerSpec:
        return cls(LayerKind.OUTPUT, width=width, activation=Activation.LINEAR)

    def to_dict(self) -> dict[str, Any]:
        if self.kind is LayerKind.CONV2D:
            return {
                "kind": self.kind.value,
                "filters": self.filters,
                "kernel": list(self.kernel),
                "stride": self.stride,
                "activation": self.activation.value,
            }
        return {"kind": self.kind.value, "width": self.width, "activation": self.activation.value}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LayerSpec:
        kernel = data.get("kernel", (1, 1))
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        kind = LayerKind(data["kind"])
        default_act = Activation.LINEAR if kind is LayerKind.OUTPUT else Activation.LEAKY_RELU
        return cls(
            kind=kind,
            filters=int(data.get("filters", 0)),
            kernel=tuple(kernel),
            stride=int(data.get("stride", 1)),
            width=int(data.get("width", 0)),
            activation=Activation(data.get("activation", default_act)),
        )


@dataclass(frozen=True)
class _Block:
    spec: LayerSpec
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    w_shape: tuple[int, int]
    w_slice: slice
    b_slice: slice

    @property
    def fan_in(self) -> int:
        return self.w_shape[0]


def _plan(input_shape: tuple[int, int, int], layers: Sequence[LayerSpec]) -> tuple[list[_Block], int]:
    if not layers or layers[-1].kind is not LayerKind.OUTPUT:
        raise ValueError("the last layer must be an output layer")
    blocks: list[_Block] = []
    shape: tuple[int, ...] = tuple(input_shape)
    offset = 0
    for spec in layers:
        if spec.kind is LayerKind.CONV2D:
            if len(shape) != 3:
                raise ValueError("conv2d layers must precede dense layers")
            h, w, c = shape
            kh, kw = spec.kernel
            oh = (h - kh) // spec.stride + 1
            ow = (w - kw) // spec.stride + 1
            if oh < 1 or ow < 1:
                raise ValueError(f"kernel {spec.kernel} does not fit input {h}x{w}")
            w_shape = (c * kh * kw, spec.filters)
            out_shape: tuple[int, ...] = (oh, ow, spec.filters)
        else:
            fan_in = int(np.prod(shape))
            w_shape = (fan_in, spec.width)
            out_shape = (spec.width,)
        n_w = w_shape[0] * w_shape[1]
        n_b = w_shape[1]
        blocks.append(
            _Block(
                spec=spec,
                in_shape=shape,
                out_shape=out_shape,
                w_shape=w_shape,
                w_slice=slice(offset, offset + n_w),
                b_slice=slice(offset + n_w, offset + n_w + n_b),
            )
        )
        offset += n_w + n_b
        shape = out_shape
    return blocks, offset


def parameter_count(input_shape: tuple[int, int, int], layers: Sequence[LayerSpec]) -> int:
    return _plan(input_shape, layers)[1]


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, H, W, C) -> (N, oh, ow, C, kh, kw)
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return windows[:, ::stride, ::stride]


def _col2im(dcols: np.ndarray, in_shape: tuple[int, ...], kh: int, kw: int, stride: int) -> np.ndarray:
    n, oh, ow = dcols.shape[:3]
    dx = np.zeros((n, *in_shape))
    span_h = stride * (oh - 1) + 1
    span_w = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + span_h : stride, j : j + span_w : stride, :] += dcols[..., i, j]
    return dx


class QNetwork:
    """Value network Q(s, .; theta) over flattened (height, width, channels) inputs."""

    def __init__(
        self,
        input_shape: tuple[int, int, int],
        layers: Sequence[LayerSpec],
        leaky_slope: float = DEFAULT_LEAKY_SLOPE,
        seed: int | None = 0,
    ):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.leaky_slope = float(leaky_slope)
        self._blocks, count = _plan(self.input_shape, self.layers)
        self.params = np.zeros(count)
        self.optimizer_state = np.zeros(count)
        if seed is not None:
            self.initialize(np.random.default_rng(seed))

    @property
    def parameter_count(self) -> int:
        return self.params.size

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def num_outputs(self) -> int:
        return self.layers[-1].width

    def initialize(self, rng: np.random.Generator) -> None:
        """He-style scaled uniform weights, zero biases."""
        for block in self._blocks:
            limit = np.sqrt(6.0 / block.fan_in)
            n = block.w_slice.stop - block.w_slice.start
            self.params[block.w_slice] = rng.uniform(-limit, limit, size=n)
            self.params[block.b_slice] = 0.0
        self.optimizer_state[:] = 0.0

    def copy(self) -> QNetwork:
        return copy.deepcopy(self)

    def describe(self) -> dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "layers": [spec.to_dict() for spec in self.layers],
            "leaky_slope": self.leaky_slope,
        }

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def _weights(self, block: _Block) -> tuple[np.ndarray, np.ndarray]:
        return self.params[block.w_slice].reshape(block.w_shape), self.params[block.b_slice]

    def _as_batch(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.input_size:
            raise ValueError(f"state length {x.shape[-1]} does not match network input {self.input_size}")
        return x

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray | None]]]:
        n = x.shape[0]
        a = x.reshape(n, *self.input_shape)
        caches: list[tuple[np.ndarray, np.ndarray | None]] = []
        for block in self._blocks:
            w, b = self._weights(block)
            spec = block.spec
            if spec.kind is LayerKind.CONV2D:
                kh, kw = spec.kernel
                cols = _im2col(a, kh, kw, spec.stride).reshape(-1, block.w_shape[0])
                z = (cols @ w + b).reshape(n, *block.out_shape)
                inputs = cols
            else:
                inputs = a.reshape(n, -1)
                z = inputs @ w + b
            if spec.activation is Activation.LEAKY_RELU:
                a = np.where(z > 0, z, self.leaky_slope * z)
                caches.append((inputs, z))
            else:
                a = z
                caches.append((inputs, None))
        return a, caches

    def _backward(self, dout: np.ndarray, caches: list[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
        grad = np.zeros_like(self.params)
        n = dout.shape[0]
        for block, (inputs, z) in zip(reversed(self._blocks), reversed(caches)):
            if z is not None:
                dout = dout * np.where(z > 0, 1.0, self.leaky_slope)
            w, _ = self._weights(block)
            spec = block.spec
            if spec.kind is LayerKind.CONV2D:
                dz = dout.reshape(-1, spec.filters)
                grad[block.w_slice] = (inputs.T @ dz).ravel()
                grad[block.b_slice] = dz.sum(axis=0)
                kh, kw = spec.kernel
                dcols = (dz @ w.T).reshape(n, block.out_shape[0], block.out_shape[1], -1, kh, kw)
                dout = _col2im(dcols, block.in_shape, kh, kw, spec.stride)
            else:
                grad[block.w_slice] = (inputs.T @ dout).ravel()
                grad[block.b_slice] = dout.sum(axis=0)
                dout = (dout @ w.T).reshape(n, *block.in_shape)
        return grad

    def activation_pattern(self, x: np.ndarray) -> np.ndarray:
        """Signs of every leaky ReLU pre-activation for a batch of flattened states."""
        _, caches = self._forward(self._as_batch(x))
        signs = [(z > 0).ravel() for _, z in caches if z is not None]
        return np.concatenate(signs) if signs else np.zeros(0, dtype=bool)

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Q-values for a batch of flattened states, shape (N, outputs)."""
        out, _ = self._forward(self._as_batch(states))
        return out

    def forward(self, state: np.ndarray) -> np.ndarray:
        x = np.asarray(state, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("forward expects a single flattened state")
        return self.predict(x)[0]

    # ------------------------------------------------------------------
    # Losses
    # ------------------------------------------------------------------

    def loss_and_gradient(
        self, batch: Sequence[Experience], objective: Objective = Objective.TD
    ) -> tuple[float, np.ndarray]:
        loss, grad, _ = self.loss_terms(batch, objective)
        return loss, grad

    def loss_terms(
        self, batch: Sequence[Experience], objective: Objective = Objective.TD
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss, gradient and the per-example errors of `example_errors` in one pass."""
        if not batch:
            raise ValueError("empty batch")
        x = self._as_batch(np.stack([e.state for e in batch]))
        actions = np.array([e.action for e in batch])
        if actions.max() >= self.num_outputs:
            raise ValueError(f"action {actions.max()} out of range for {self.num_outputs} outputs")
        n = len(batch)
        rows = np.arange(n)
        out, caches = self._forward(x)
        dout = np.zeros_like(out)

        match Objective(objective):
            case Objective.TD:
                targets = np.array([e.ret for e in batch])
                diff = out[rows, actions] - targets
                loss = float(np.mean(diff**2))
                dout[rows, actions] = 2.0 * diff / n
                errors = np.abs(diff)
            case Objective.CROSS_ENTROPY:
                log_p = _log_softmax(out)
                errors = -log_p[rows, actions]
                loss = float(np.mean(errors))
                dout = np.exp(log_p)
                dout[rows, actions] -= 1.0
                dout /= n

        return loss, self._backward(dout, caches), errors

    def example_errors(
        self, batch: Sequence[Experience], objective: Objective = Objective.TD
    ) -> np.ndarray:
        """Per-example error: |ret - Q(s, a)| for TD, cross-entropy for classification."""
        if not batch:
            return np.zeros(0)
        out = self.predict(np.stack([e.state for e in batch]))
        rows = np.arange(len(batch))
        actions = np.array([e.action for e in batch])
        match Objective(objective):
            case Objective.TD:
                targets = np.array([e.ret for e in batch])
                return np.abs(targets - out[rows, actions])
            case Objective.CROSS_ENTROPY:
                return -_log_softmax(out)[rows, actions]

    def one_step_td_errors(self, batch: Sequence[Experience], gamma: float) -> np.ndarray:
        """|r + gamma * max_a' Q(s', a') - Q(s, a)|; terminal transitions use r alone."""
        if not batch:
            return np.zeros(0)
        q = self.predict(np.stack([e.state for e in batch]))
        q_next = self.predict(np.stack([e.next_state for e in batch])).max(axis=1)
        rows = np.arange(len(batch))
        actions = np.array([e.action for e in batch])
        rewards = np.array([e.reward for e in batch])
        bootstrap = np.array([0.0 if e.terminal else 1.0 for e in batch])
        target = rewards + gamma * bootstrap * q_next
        return np.abs(target - q[rows, actions])


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(net: QNetwork, state: np.ndarray) -> np.ndarray:
    return net.forward(state)


def td_loss(net: QNetwork, batch: Sequence[Experience]) -> tuple[float, np.ndarray]:
    """Mean squared error between precomputed returns and Q of the taken action."""
    return net.loss_and_gradient(batch, Objective.TD)


def cross_entropy_loss(net: QNetwork, batch: Sequence[Experience]) -> tuple[float, np.ndarray]:
    return net.loss_and_gradient(batch, Objective.CROSS_ENTROPY)


def gradient_check(
    net: QNetwork,
    batch: Sequence[Experience],
    step: float = 1e-5,
    objective: Objective = Objective.TD,
    max_params: int = 200,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
    skip_kinks: bool = True,
) -> float:
    """Max relative error between backprop and central differences.

    Nets with more than 10**4 parameters are checked on a random subset of
    `max_params` coordinates. With `skip_kinks`, coordinates whose perturbation
    flips a leaky ReLU unit are left out. Gradients smaller than `floor` are
    compared absolutely.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    perturbed = net.copy()
    _, analytic = perturbed.loss_and_gradient(batch, objective)
    x = np.stack([e.state for e in batch])
    pattern = perturbed.activation_pattern(x)
    if perturbed.parameter_count > 10**4:
        rng = rng or np.random.default_rng(0)
        indices = rng.choice(perturbed.parameter_count, size=max_params, replace=False)
    else:
        indices = np.arange(perturbed.parameter_count)

    worst = 0.0
    skipped = 0
    for i in indices:
        original = perturbed.params[i]
        perturbed.params[i] = original + step
        plus, _ = perturbed.loss_and_gradient(batch, objective)
        crossed = not np.array_equal(perturbed.activation_pattern(x), pattern)
        perturbed.params[i] = original - step
        minus, _ = perturbed.loss_and_gradient(batch, objective)
        crossed = crossed or not np.array_equal(perturbed.activation_pattern(x), pattern)
        perturbed.params[i] = original
        if crossed and skip_kinks:
            skipped += 1
            continue
        numeric = (plus - minus) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    logger.debug(
        "gradient check over %d parameters (%d skipped at kinks): max relative error %.3e",
        len(indices) - skipped,
        skipped,
        worst,
    )
    return worst
