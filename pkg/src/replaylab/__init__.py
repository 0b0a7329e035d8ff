"""replaylab: selective experience replay for lifelong learning."""

__version__ = "0.1.0"
