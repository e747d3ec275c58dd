"""Experiment configuration: strict TOML files validated with pydantic."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .training import TrainParams


class ConfigError(ValueError):
    """Raised for unreadable or invalid experiment configs."""


class Hyperparameters(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    temperature: float = Field(0.1, gt=0)
    alpha: float = Field(0.03, gt=0, lt=1)
    lr: float = Field(0.1, gt=0, le=1)
    gamma: float = Field(0.9, ge=0, lt=1)
    bonus: float = Field(1.0, ge=0)
    q_init: float = 0.0
    k_replay: int = Field(4, ge=0)
    rho_demo: float = Field(0.5, ge=0, le=1)
    floor: float = Field(1e-4, gt=0, lt=1 / 3)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(50_000, ge=1)
    bc_weight: float = Field(0.1, ge=0, lt=1)
    demo_attempts: int = Field(200, ge=1)
    self_inference: Literal["argmax", "posterior", "sample"] = "argmax"
    horizon: int = Field(5, ge=1)
    eval_every: int = Field(100, ge=0)
    teacher_eval_every: int = Field(0, ge=0)
    eval_demos: int = Field(20, ge=1)
    eval_rollouts: int = Field(20, ge=1)

    def train_params(self) -> TrainParams:
        fields = self.model_dump(exclude={"bonus", "horizon", "teacher_eval_every"})
        return TrainParams(**fields)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    name: str = "experiment"
    env: Literal["dtb", "blockrel"]
    teacher: Literal["naive", "pedagogical"]
    learner: Literal["literal", "pragmatic"]
    variant: Literal["ours", "B1", "B2", "B3"] = "ours"
    demo_budget: int = Field(ge=0)
    teacher_epochs: int = Field(ge=1)
    epochs: int = Field(ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    output_dir: Optional[str] = None
    hyper: Hyperparameters = Field(default_factory=Hyperparameters)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if self.env == "dtb" and self.variant != "ours":
            raise ValueError("baseline variants need a replay buffer and only apply to blockrel")
        return self

    def config_hash(self) -> str:
        """sha256 over the canonical JSON form, ignoring where results are written."""
        payload = self.model_dump(exclude={"output_dir"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_updates(self, **changes) -> "ExperimentConfig":
        data = self.model_dump()
        hyper = changes.pop("hyper", None)
        data.update(changes)
        if hyper:
            data["hyper"].update(hyper)
        return ExperimentConfig.model_validate(data)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_errors(exc)}") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
