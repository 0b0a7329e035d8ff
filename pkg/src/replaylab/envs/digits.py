"""Lifelong digit classification: task i exposes only digits i and i + 5."""

from __future__ import annotations

import pathlib
from dataclasses import dataclass, field

import numpy as np

from replaylab.core import Experience
from replaylab.envs.idx import load_idx

IMAGE_SIZE = 28
NUM_CLASSES = 10
NUM_TASKS = 5
OBSERVATION_SHAPE = (IMAGE_SIZE, IMAGE_SIZE, 1)

BLOCK = 7
BLOCKS_PER_SIDE = IMAGE_SIZE // BLOCK


@dataclass
class DigitDataset:
    images: np.ndarray  # (N, 28, 28), values in [0, 1]
    labels: np.ndarray  # (N,)

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ValueError(f"image count {len(self.images)} != label count {len(self.labels)}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, digits: tuple[int, ...]) -> DigitDataset:
        mask = np.isin(self.labels, digits)
        return DigitDataset(self.images[mask], self.labels[mask])

    def split(self, test_fraction: float, rng: np.random.Generator) -> tuple[DigitDataset, DigitDataset]:
        order = rng.permutation(len(self))
        n_test = int(round(len(self) * test_fraction))
        test, train = order[:n_test], order[n_test:]
        return (
            DigitDataset(self.images[train], self.labels[train]),
            DigitDataset(self.images[test], self.labels[test]),
        )


def task_digits(task_index: int) -> tuple[int, int]:
    if not 0 <= task_index < NUM_TASKS:
        raise ValueError(f"invalid task index {task_index}; digit tasks are 0..{NUM_TASKS - 1}")
    return task_index, task_index + 5


def synthetic_templates() -> np.ndarray:
    """Ten block patterns on a 4x4 grid of 7x7 blocks; class k lights blocks k, k+3, k+6, k+9."""
    templates = np.zeros((NUM_CLASSES, IMAGE_SIZE, IMAGE_SIZE))
    for k in range(NUM_CLASSES):
        for block in (k, k + 3, k + 6, k + 9):
            r, c = divmod(block % (BLOCKS_PER_SIDE**2), BLOCKS_PER_SIDE)
            templates[k, r * BLOCK : (r + 1) * BLOCK, c * BLOCK : (c + 1) * BLOCK] = 1.0
    return templates


def synthetic_digits(
    rng: np.random.Generator, per_class: int = 500, noise: float = 0.1
) -> DigitDataset:
    """Noisy copies of the block templates, quantized to bytes so they survive IDX round trips."""
    templates = synthetic_templates()
    labels = np.repeat(np.arange(NUM_CLASSES), per_class)
    images = templates[labels] + rng.normal(0.0, noise, size=(len(labels), IMAGE_SIZE, IMAGE_SIZE))
    images = np.rint(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    order = rng.permutation(len(labels))
    return DigitDataset(images[order], labels[order])


def load_dataset(images_path: str | pathlib.Path, labels_path: str | pathlib.Path) -> DigitDataset:
    images, labels = load_idx(images_path, labels_path)
    return DigitDataset(images, labels)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(data_dir: pathlib.Path, stem: str) -> pathlib.Path:
    for name in (stem, f"{stem}.gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist(data_dir: str | pathlib.Path) -> tuple[DigitDataset, DigitDataset]:
    """Train and test splits from the standard MNIST file names, gzipped or not."""
    d = pathlib.Path(data_dir)
    train = load_dataset(*(_find(d, stem) for stem in MNIST_FILES["train"]))
    test = load_dataset(*(_find(d, stem) for stem in MNIST_FILES["test"]))
    return train, test


def classification_as_experience(
    image: np.ndarray,
    label: int,
    num_classes: int = NUM_CLASSES,
    task_id: int = 0,
    step_index: int = 0,
) -> Experience:
    """Labeled image as a terminal one-step experience whose action is the label."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for {num_classes} classes")
    state = np.asarray(image, dtype=np.float64).reshape(-1)
    return Experience(
        state=state,
        action=int(label),
        reward=0.0,
        next_state=np.zeros_like(state),
        terminal=True,
        ret=0.0,
        task_id=task_id,
        step_index=step_index,
    )


@dataclass
class ClassificationTask:
    """Stream of training examples for one digit pair plus its held-out test split."""

    task_index: int
    train: DigitDataset
    test: DigitDataset
    iterations: int = 1000
    _order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    _cursor: int = field(default=0, repr=False)

    num_actions = NUM_CLASSES
    observation_shape = OBSERVATION_SHAPE

    def __post_init__(self) -> None:
        digits = self.digits
        for name, data in (("train", self.train), ("test", self.test)):
            stray = set(np.unique(data.labels)) - set(digits)
            if stray:
                raise ValueError(f"task {self.task_index} {name} split contains digits {sorted(stray)}")
        if len(self.train) == 0:
            raise ValueError(f"task {self.task_index} has no training examples")

    @property
    def task_id(self) -> int:
        return self.task_index

    @property
    def digits(self) -> tuple[int, int]:
        return task_digits(self.task_index)

    @property
    def observation_size(self) -> int:
        return IMAGE_SIZE * IMAGE_SIZE

    def next_example(self, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """Next training example; the split is reshuffled after every full pass."""
        if self._cursor >= len(self._order):
            self._order = rng.permutation(len(self.train))
            self._cursor = 0
        i = int(self._order[self._cursor])
        self._cursor += 1
        return self.train.images[i], int(self.train.labels[i])


def build_tasks(
    train: DigitDataset, test: DigitDataset, num_tasks: int = NUM_TASKS, iterations: int = 1000
) -> list[ClassificationTask]:
    return [
        ClassificationTask(
            task_index=i,
            train=train.subset(task_digits(i)),
            test=test.subset(task_digits(i)),
            iterations=iterations,
        )
        for i in range(num_tasks)
    ]
