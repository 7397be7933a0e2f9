"""Experiment configuration: a validated JSON file driving the CLI.

Sections: ``data`` (dataset paths), ``model`` (variant and architecture),
``window`` (decomposition geometry), ``train`` (optimizer loop), optional
``rollout``, ``metrics`` and ``regimes``.  Unknown keys anywhere are
rejected with the offending path named.  ``resolved()`` returns the fully
populated form that every run writes next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelSpec
from .pipeline import WindowPlan
from .rollout import RolloutPlan
from .training import TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "RegimeConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _require_keys(obj: dict, known: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    extra = sorted(set(obj) - known)
    if extra:
        raise ConfigError(f"{path}: unknown keys {extra}")


@dataclass(frozen=True)
class RegimeConfig:
    """Two-regime split settings; presence enables regime-pair training."""

    epsilon: float
    temperature: str = "T"

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "temperature": self.temperature}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    train_data: str
    test_data: str | None
    model: ModelSpec
    window: WindowPlan
    train: TrainConfig
    rollout: RolloutPlan | None = None
    clip_metrics: bool = False
    regimes: RegimeConfig | None = None

    def resolved(self) -> dict:
        out = {
            "seed": self.seed,
            "data": {"train": self.train_data, "test": self.test_data},
            "model": self.model.to_json(),
            "window": {"width": self.window.width, "segments": self.window.segments},
            "train": self.train.to_json(),
            "metrics": {"clip": self.clip_metrics},
        }
        if self.rollout is not None:
            out["rollout"] = {"windows": list(self.rollout.windows)}
        if self.regimes is not None:
            out["regimes"] = self.regimes.to_json()
        return out


def _parse_section(obj: dict, path: str, builder):
    try:
        return builder(obj)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def parse_config(raw: dict, source: str = "config") -> ExperimentConfig:
    _require_keys(raw, {"seed", "data", "model", "window", "train", "rollout",
                        "metrics", "regimes"}, source)
    for key in ("seed", "data", "train"):
        if key not in raw:
            raise ConfigError(f"{source}.{key}: required section missing")

    data = raw["data"]
    _require_keys(data, {"train", "test"}, f"{source}.data")
    if "train" not in data:
        raise ConfigError(f"{source}.data.train: required")

    window_obj = raw.get("window", {})
    _require_keys(window_obj, {"width", "segments"}, f"{source}.window")

    metrics_obj = raw.get("metrics", {})
    _require_keys(metrics_obj, {"clip"}, f"{source}.metrics")

    model = _parse_section(raw.get("model", {}), f"{source}.model", ModelSpec.from_json)
    window = _parse_section(window_obj, f"{source}.window",
                            lambda o: WindowPlan(**o))
    train = _parse_section(raw["train"], f"{source}.train", TrainConfig.from_json)

    rollout = None
    if raw.get("rollout") is not None:
        robj = raw["rollout"]
        _require_keys(robj, {"windows"}, f"{source}.rollout")
        if "windows" not in robj:
            raise ConfigError(f"{source}.rollout.windows: required")
        rollout = _parse_section(robj["windows"], f"{source}.rollout.windows",
                                 lambda o: RolloutPlan(tuple(o)))

    regimes = None
    if raw.get("regimes") is not None:
        robj = raw["regimes"]
        _require_keys(robj, {"epsilon", "temperature"}, f"{source}.regimes")
        if "epsilon" not in robj:
            raise ConfigError(f"{source}.regimes.epsilon: required")
        regimes = _parse_section(robj, f"{source}.regimes",
                                 lambda o: RegimeConfig(**o))

    if not isinstance(raw["seed"], int):
        raise ConfigError(f"{source}.seed: expected an integer")

    return ExperimentConfig(
        seed=raw["seed"],
        train_data=str(data["train"]),
        test_data=str(data["test"]) if data.get("test") is not None else None,
        model=model,
        window=window,
        train=train,
        rollout=rollout,
        clip_metrics=bool(metrics_obj.get("clip", False)),
        regimes=regimes,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return parse_config(raw, source=str(path))


def write_resolved(cfg: ExperimentConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "config.json"
    target.write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    return target
