"""Run configuration, dataset profiles and config-file loading."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import FormatError, InvalidParameterError
from .generation import HARD_PROMPTS

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class LossWeights:
    vision: float = 1.0
    language: float = 0.8
    ptiou: float = 10.0

    def __post_init__(self):
        if min(self.vision, self.language, self.ptiou) < 0:
            raise InvalidParameterError(f"loss weights must be nonnegative: {self}")


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    n_moments: int
    center_low: float
    center_high: float
    width_logit: float
    max_width_logit: float | None = None


PROFILES = {
    # centers spread from the start to the end of the video, width sigmoid 0.3
    "activitynet": DatasetProfile("activitynet", 4, 0.0, 1.0, -0.8472),
    # skip intro/outro: centers over [0.1, 0.9], narrow init, width capped at 0.3
    "youcook2": DatasetProfile("youcook2", 8, 0.1, 0.9, -2.1972, max_width_logit=-0.8472),
}


def get_profile(name: str) -> DatasetProfile:
    try:
        return PROFILES[name.lower()]
    except KeyError:
        raise InvalidParameterError(f"unknown dataset profile {name!r}; known: {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class RunConfig:
    profile: str = "activitynet"
    n_moments: int | None = None  # None: profile default
    outer_iterations: int = 12
    vision_weight: float = 1.0
    language_weight: float = 0.8
    ptiou_weight: float = 10.0
    temperature: float = 1.0
    sharpness_initial: float = 10.0
    sharpness_increment: float = 1.0
    optimizer: str = "adamw"
    lr: float = 6e-3
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0018
    n_candidates: int = 512
    soft_prompt_length: int = 5
    projected_tokens: int = 20
    max_caption_tokens: int = 20
    center_init_eps: float = 1e-3
    width_init_logit: float | None = None  # None: profile default
    max_width_logit: float | None = None  # None: profile default
    prefix_init_std: float = 0.0
    projection_init_std: float = 0.0
    hard_prompts: tuple = HARD_PROMPTS
    scorer: str = "clip-vit-l-14"
    lm: str = "gpt2-medium"
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "hard_prompts", tuple(self.hard_prompts))
        get_profile(self.profile)
        positive = ("outer_iterations", "temperature", "sharpness_initial", "lr", "n_candidates",
                    "soft_prompt_length", "projected_tokens", "max_caption_tokens")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_moments is not None and self.n_moments < 1:
            raise InvalidParameterError(f"n_moments must be >= 1, got {self.n_moments}")
        if self.sharpness_increment < 0 or self.weight_decay < 0:
            raise InvalidParameterError("sharpness_increment and weight_decay must be nonnegative")
        if not 0 < self.center_init_eps < 0.5:
            raise InvalidParameterError("center_init_eps must lie in (0, 0.5)")
        LossWeights(self.vision_weight, self.language_weight, self.ptiou_weight)

    @property
    def dataset(self) -> DatasetProfile:
        return get_profile(self.profile)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.vision_weight, self.language_weight, self.ptiou_weight)

    @property
    def moments(self) -> int:
        return self.n_moments if self.n_moments is not None else self.dataset.n_moments

    @property
    def width_logit(self) -> float:
        return self.width_init_logit if self.width_init_logit is not None else self.dataset.width_logit

    @property
    def width_ceiling(self) -> float | None:
        return self.max_width_logit if self.max_width_logit is not None else self.dataset.max_width_logit

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)

    def sharpness(self, iteration: int) -> float:
        return self.sharpness_initial + iteration * self.sharpness_increment

    @property
    def planned_updates(self) -> int:
        return self.outer_iterations * self.max_caption_tokens

    def resolved(self) -> "RunConfig":
        """Copy with every profile-dependent field made explicit."""
        return replace(self, n_moments=self.moments, width_init_logit=self.width_logit,
                       max_width_logit=self.width_ceiling)

    def to_dict(self) -> dict:
        d = asdict(self.resolved())
        d["hard_prompts"] = list(d["hard_prompts"])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise FormatError(f"unknown config keys {unknown}")
        return cls(**data)


def load_config(path, **overrides) -> RunConfig:
    """Read a flat TOML key/value file whose keys are RunConfig field names."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"cannot parse config: {exc}", where=str(path)) from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise FormatError(f"config must be flat; found tables {nested}", where=str(path))
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise FormatError(str(exc), where=str(path)) from exc


def dump_config(config: RunConfig) -> str:
    """Flat TOML text; ``load_config`` reads it back to a config with the same resolved values."""
    lines = []
    for key, value in config.to_dict().items():
        if value is None:
            continue
        lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        if isinstance(v, float) and not math.isfinite(v):
            raise InvalidParameterError(f"cannot write non-finite value {v}")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise InvalidParameterError(f"cannot write {type(v).__name__} to config")
