"""Configuration dataclasses shared across the package.

Defaults are the full-scale values; ``ModelConfig.desk()`` returns the
reduced configuration used for fast tests and overfit runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


# categorical vocabularies for lane waypoints
BOUNDARY_TYPES = 5  # 0 none, 1 broken white, 2 solid white, 3 solid yellow, 4 road edge
CENTER_TYPES = 5  # 0 undefined, 1 freeway, 2 surface street, 3 bike lane, 4 virtual
TRAFFIC_LIGHT_STATES = 4  # 0 unknown, 1 red, 2 yellow, 3 green
LANE_VOCABS = (BOUNDARY_TYPES, BOUNDARY_TYPES, CENTER_TYPES, TRAFFIC_LIGHT_STATES, 2, 2)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256  # F
    a2a_heads: int = 8
    map_heads: int = 8  # agent-lane and agent-crosswalk
    mode_heads: int = 4  # agent-map multimodal stage
    knn: int = 20
    lane_group: int = 2  # l for lanes
    cw_group: int = 1  # l for crosswalks
    modes: int = 3  # X
    neighbors: int = 10  # K
    history: int = 20  # M
    future: int = 50  # N
    lane_points: int = 50
    cw_points: int = 20
    num_lanes: int = 6
    num_crosswalks: int = 4
    decoder_hidden: int = 256
    dt: float = 0.1
    wheelbase: float = 2.8
    max_accel: float = 5.0
    max_steer: float = 0.6
    position_unit: float = 10.0  # meters per network unit for positions and speeds

    def __post_init__(self) -> None:
        for name in ("dim", "a2a_heads", "map_heads", "mode_heads", "knn", "lane_group",
                     "cw_group", "modes", "history", "future", "lane_points", "cw_points",
                     "decoder_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.neighbors < 0:
            raise ConfigError("neighbors must be >= 0")
        for heads in (self.a2a_heads, self.map_heads, self.mode_heads):
            if self.dim % heads:
                raise ConfigError(f"{heads} heads do not divide dim {self.dim}")
        if self.lane_points % self.lane_group:
            raise ConfigError("lane_group must divide lane_points")
        if self.cw_points % self.cw_group:
            raise ConfigError("cw_group must divide cw_points")
        if self.dt <= 0 or self.wheelbase <= 0:
            raise ConfigError("dt and wheelbase must be positive")

    @classmethod
    def desk(cls, **overrides: Any) -> "ModelConfig":
        base = dict(dim=32, a2a_heads=8, map_heads=8, mode_heads=4, knn=4, lane_group=4,
                    cw_group=4, neighbors=4, history=10, future=20, lane_points=20,
                    cw_points=20, decoder_hidden=512)
        base.update(overrides)
        return cls(**base)

    @property
    def horizon(self) -> float:
        return self.future * self.dt


@dataclass(frozen=True)
class LossWeights:
    prediction: float = 0.5
    score: float = 1.0
    ade: float = 1.0
    fde: float = 1.0
    dt: float = 0.1
    horizon: float | None = None  # T; None means N * dt

    def __post_init__(self) -> None:
        if min(self.prediction, self.score, self.ade, self.fde) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.dt <= 0 or (self.horizon is not None and self.horizon <= 0):
            raise ConfigError("dt and horizon must be positive")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 2e-4
    halve_every: int | None = 4  # None disables the step decay
    epochs: int = 20
    seed: int = 0
    grad_clip: float | None = 10.0
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0 or self.base_lr <= 0:
            raise ConfigError("batch_size, epochs and base_lr must be positive")
        if self.halve_every is not None and self.halve_every <= 0:
            raise ConfigError("halve_every must be positive or null")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or null")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "weights" in data:
            data["weights"] = LossWeights(**data["weights"])
        if "model" in data:
            data["model"] = ModelConfig(**data["model"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def config_hash(obj) -> str:
    payload = json.dumps(dataclasses.asdict(obj), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
