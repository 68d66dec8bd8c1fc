"""Pipeline configuration: nested dataclasses with strict JSON round-trip.

Unknown keys are rejected rather than ignored so a typo in a config file
fails loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any, Optional

from .detector import MatchConfig
from .errors import ConfigError
from .verifier import VerifierConfig


@dataclasses.dataclass(frozen=True)
class GeometryConfig:
    """Ground-plane estimation stage.

    The plane is fit only to points from sparsely populated occupancy
    cells (built on a level plane at the mounting height), which strips
    most object surfaces from the sample before RANSAC ever runs.  A
    ``fixed_plane`` of (nx, ny, nz, offset) skips estimation entirely.
    """

    camera_height_m: float = 1.3
    ransac_iterations: int = 200
    inlier_threshold_m: float = 0.05
    occupancy_cell_m: float = 0.2
    low_density_max: int = 150
    max_fit_points: int = 4000
    seed: int = 0
    fixed_plane: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if self.camera_height_m <= 0:
            raise ConfigError(f"camera height must be positive, got {self.camera_height_m}")
        if self.ransac_iterations < 1:
            raise ConfigError(f"ransac iterations must be >= 1, got {self.ransac_iterations}")
        if self.inlier_threshold_m <= 0:
            raise ConfigError(f"inlier threshold must be positive, got {self.inlier_threshold_m}")
        if self.occupancy_cell_m <= 0:
            raise ConfigError(f"occupancy cell must be positive, got {self.occupancy_cell_m}")
        if self.low_density_max < 0:
            raise ConfigError(f"low density max must be >= 0, got {self.low_density_max}")
        if self.max_fit_points < 3:
            raise ConfigError(f"max fit points must be >= 3, got {self.max_fit_points}")
        if self.fixed_plane is not None:
            object.__setattr__(self, "fixed_plane", tuple(float(v) for v in self.fixed_plane))
            if len(self.fixed_plane) != 4:
                raise ConfigError("fixed plane needs (nx, ny, nz, offset)")


@dataclasses.dataclass(frozen=True)
class LabelingConfig:
    """Structure labeling stage (height bands and elevated-cell rule)."""

    cell_size_m: float = 0.2
    ground_top_m: float = 0.2
    object_top_m: float = 2.0
    free_top_m: float = 2.8
    free_max_fraction: float = 0.05
    object_max_fraction: float = 0.10

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ConfigError(f"cell size must be positive, got {self.cell_size_m}")
        if not (0 < self.ground_top_m < self.object_top_m < self.free_top_m):
            raise ConfigError("height band edges must be ascending and positive")
        for name in ("free_max_fraction", "object_max_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


@dataclasses.dataclass(frozen=True)
class RoiConfig:
    """Region-of-interest extraction from object-labeled points."""

    cell_size_m: float = 0.2
    min_points: int = 50

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ConfigError(f"cell size must be positive, got {self.cell_size_m}")
        if self.min_points < 1:
            raise ConfigError(f"min points must be >= 1, got {self.min_points}")


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    geometry: GeometryConfig = GeometryConfig()
    labeling: LabelingConfig = LabelingConfig()
    roi: RoiConfig = RoiConfig()
    match: MatchConfig = MatchConfig()
    verifier: VerifierConfig = VerifierConfig()
    overlap_min: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.overlap_min <= 1.0):
            raise ConfigError(f"overlap_min must be in (0, 1], got {self.overlap_min}")


_GROUPS = {
    "geometry": GeometryConfig,
    "labeling": LabelingConfig,
    "roi": RoiConfig,
    "match": MatchConfig,
    "verifier": VerifierConfig,
}


def _build(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{context}: {err}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    known = set(_GROUPS) | {"overlap_min"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in _GROUPS.items():
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    if "overlap_min" in data:
        kwargs["overlap_min"] = data["overlap_min"]
    return PipelineConfig(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict:
    out: dict[str, Any] = {}
    for name in _GROUPS:
        out[name] = dataclasses.asdict(getattr(config, name))
    out["overlap_min"] = config.overlap_min
    return out


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return config_from_dict(data)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(config: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Replace dotted fields, e.g. ``{"match.th_soft": 0.9}``.

    Used by the command line so flags win over the config file.
    """
    grouped: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for dotted, value in overrides.items():
        if isinstance(value, list):
            value = tuple(value)
        if "." in dotted:
            group, fld = dotted.split(".", 1)
            if group not in _GROUPS:
                raise ConfigError(f"unknown config group '{group}'")
            grouped.setdefault(group, {})[fld] = value
        elif dotted == "overlap_min":
            top[dotted] = value
        else:
            raise ConfigError(f"unknown config field '{dotted}'")
    kwargs: dict[str, Any] = dict(top)
    for group, values in grouped.items():
        current = getattr(config, group)
        valid = {f.name for f in dataclasses.fields(current)}
        bad = set(values) - valid
        if bad:
            raise ConfigError(f"unknown keys in group '{group}': {sorted(bad)}")
        kwargs[group] = dataclasses.replace(current, **values)
    return dataclasses.replace(config, **kwargs) if kwargs else config
