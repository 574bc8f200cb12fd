"""JSON run configuration shared by the command-line tools.

Every section is optional and falls back to library defaults. Unknown keys
and values of the wrong type are rejected with the dotted path of the
offending key, e.g. ``model.conv_channels[1]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, EvogridError
from .evaluate import TruthDirichletConfig
from .geometric_ism import GeometricIsmParams
from .grid import DESK_SPEC, GridSpec
from .loss import LossConfig
from .model import ModelConfig, TrainConfig
from .synth import HD_LIDAR, SPARSE_LIDAR, LidarConfig, SceneParams


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = DESK_SPEC
    scene: SceneParams = SceneParams()
    sparse_lidar: LidarConfig = SPARSE_LIDAR
    hd_lidar: LidarConfig = HD_LIDAR
    min_hits: int = 50
    seed: int = 0
    n_samples: int = 50
    geometric: GeometricIsmParams = GeometricIsmParams()
    loss: LossConfig = LossConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    truth: TruthDirichletConfig = TruthDirichletConfig()
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model.grid != self.grid:
            object.__setattr__(self, "model", replace(self.model, grid=self.grid))

    def as_dict(self) -> dict:
        model = self.model.as_dict()
        del model["grid"]
        return {
            "grid": self.grid.as_dict(),
            "scene": self.scene.as_dict(),
            "sparse_lidar": self.sparse_lidar.as_dict(),
            "hd_lidar": self.hd_lidar.as_dict(),
            "min_hits": self.min_hits,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "geometric": self.geometric.as_dict(),
            "loss": self.loss.as_dict(),
            "model": model,
            "train": self.train.as_dict(),
            "truth": self.truth.as_dict(),
            "paths": dict(self.paths),
        }


_SCALARS = ("min_hits", "seed", "n_samples")
_PATH_KEYS = ("manifest", "weights", "out")


def _check_value(path: str, value, default):
    """Coerce a JSON value to the type of ``default`` or fail with ``path``."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, tuple):
        if isinstance(value, list) and (len(value) == len(default) or path.endswith("conv_channels")):
            proto = default[0] if default else 0
            return tuple(_check_value(f"{path}[{i}]", v, proto) for i, v in enumerate(value))
    else:  # pragma: no cover - every section field has a scalar or tuple default
        return value
    raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")


def _section(path: str, cls, data, base, skip=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in fields(cls) if f.name not in skip}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
    values = {}
    for key, value in data.items():
        values[key] = _check_value(f"{path}.{key}", value, getattr(base, key))
    try:
        return replace(base, **values)
    except (EvogridError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


_SECTIONS = {
    "grid": GridSpec,
    "scene": SceneParams,
    "sparse_lidar": LidarConfig,
    "hd_lidar": LidarConfig,
    "geometric": GeometricIsmParams,
    "loss": LossConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "truth": TruthDirichletConfig,
}


def parse_config(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay a parsed JSON document on ``base`` (library defaults if None)."""
    base = base or RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    known = set(_SECTIONS) | set(_SCALARS) | {"paths"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown key")
    updates = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            skip = ("grid",) if key == "model" else ()
            updates[key] = _section(key, cls, data[key], getattr(base, key), skip)
    for key in _SCALARS:
        if key in data:
            value = _check_value(key, data[key], getattr(base, key))
            if value < 0:
                raise ConfigError(f"{key}: must be nonnegative")
            updates[key] = value
    if "paths" in data:
        paths = data["paths"]
        if not isinstance(paths, dict):
            raise ConfigError("paths: expected an object")
        for key, value in paths.items():
            if key not in _PATH_KEYS:
                raise ConfigError(f"paths.{key}: unknown key")
            if not isinstance(value, str):
                raise ConfigError(f"paths.{key}: expected str, got {json.dumps(value)}")
        updates["paths"] = {**base.paths, **paths}
    if "grid" in updates and "model" not in updates:
        updates["model"] = replace(base.model, grid=updates["grid"])
    elif "model" in updates:
        updates["model"] = replace(updates["model"], grid=updates.get("grid", base.grid))
    return replace(base, **updates)


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration file.

    OSError propagates for unreadable files; malformed content raises
    ConfigError.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)
