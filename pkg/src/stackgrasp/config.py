"""JSON run configuration shared by the CLI and the evaluation harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .pomdp import NoiseProfile, RewardParams
from .simulator import GeneratorConfig

_KEYS = {
    "noise", "reward", "generator", "horizon", "retry_cap", "minutes_per_grasp",
    "prior_alpha", "prior_scenes", "workers",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    noise: NoiseProfile = field(default_factory=NoiseProfile.default)
    reward: RewardParams = field(default_factory=RewardParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    horizon: int | None = None
    retry_cap: int = 3
    minutes_per_grasp: float = 0.9
    prior_alpha: float = 0.5
    prior_scenes: int = 2000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.retry_cap < 1:
            raise ConfigError("retry_cap must be >= 1")
        if self.minutes_per_grasp < 0:
            raise ConfigError("minutes_per_grasp must be >= 0")
        if self.prior_alpha <= 0 or self.prior_scenes < 0:
            raise ConfigError("prior_alpha must be > 0 and prior_scenes >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "noise": self.noise.to_dict(),
            "reward": asdict(self.reward),
            "generator": self.generator.to_dict(),
            "horizon": self.horizon,
            "retry_cap": self.retry_cap,
            "minutes_per_grasp": self.minutes_per_grasp,
            "prior_alpha": self.prior_alpha,
            "prior_scenes": self.prior_scenes,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Config":
        unknown = set(data) - _KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = cls()
        try:
            kw: dict = {}
            if "noise" in data:
                # partial tables extend the defaults
                kw["noise"] = base.noise.updated(
                    data["noise"].get("recall", {}), data["noise"].get("grasp_success", {})
                )
            if "reward" in data:
                kw["reward"] = replace(base.reward, **data["reward"])
            if "generator" in data:
                kw["generator"] = GeneratorConfig.from_dict(data["generator"])
            for key in ("horizon", "retry_cap", "minutes_per_grasp", "prior_alpha", "prior_scenes", "workers"):
                if key in data:
                    kw[key] = data[key]
            return replace(base, **kw)
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return Config.from_dict(data)
