"""Preset loader utilities: discover and read bundled experiment configs from the configs/ folder."""

from __future__ import annotations

import os
import pathlib

PRESETS_ENV_VAR = "REPLAYLAB_PRESETS_DIR"


def get_presets_dir() -> pathlib.Path:
    return pathlib.Path(os.getenv(PRESETS_ENV_VAR, "configs"))


def list_presets() -> list[str]:
    d = get_presets_dir()
    if not d.exists():
        return []
    return [
        str(p.relative_to(d).with_suffix("")).replace("\\", "/")
        for p in sorted(d.rglob("*.toml"))
    ]


def preset_path(name: str) -> pathlib.Path:
    d = get_presets_dir()
    p = d / f"{name}.toml"
    if not p.exists():
        raise FileNotFoundError(f"Preset {name!r} not found. Available: {list_presets()}")
    return p


def read_preset(name: str) -> str:
    return preset_path(name).read_text(encoding="utf-8")


def resolve_config_path(name_or_path: str) -> pathlib.Path:
    """A path to an existing file is used as is; anything else is looked up as a preset name."""
    p = pathlib.Path(name_or_path)
    if p.is_file():
        return p
    return preset_path(name_or_path.removesuffix(".toml"))
