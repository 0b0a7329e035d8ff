"""Multi-task environments: the four-room grid world and lifelong digit classification."""

from replaylab.envs.digits import ClassificationTask, DigitDataset, classification_as_experience, synthetic_digits
from replaylab.envs.gridworld import GridWorld, StepResult, grid_state_distance
from replaylab.envs.idx import IdxFormatError, load_idx

__all__ = [
    "ClassificationTask",
    "DigitDataset",
    "GridWorld",
    "IdxFormatError",
    "StepResult",
    "classification_as_experience",
    "grid_state_distance",
    "load_idx",
    "synthetic_digits",
]
