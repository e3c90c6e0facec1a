"""JSON run configuration with strict key and range checking.

Schema (every key optional; defaults shown)::

    {
      "model":   {"img_ch": 1, "channels": 128, "resolution": 64},
      "train":   {"epochs": 25, "batch": 8, "lr_sgd": 0.02, "momentum": 0.9,
                  "lr_adam": 0.0002, "lambda": 1.0, "margin": 0.5, "scale": 30.0,
                  "seed": 0, "val_fraction": 0.2, "grad_clip": 3.0},
      "explain": {"threshold": "auto", "mode": "isolated"},
      "hiding":  {"sigma": 4.0, "percentages": [0, 10, ..., 90], "kernel_size": null, "seed": 0}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .hiding import HidingGameConfig
from .model import Architecture
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    img_ch: int = 1
    channels: int = 128
    resolution: int = 64

    def __post_init__(self):
        if self.img_ch not in (1, 3):
            raise ConfigError("model.img_ch must be 1 or 3")
        if self.channels < 1:
            raise ConfigError("model.channels must be >= 1")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError("model.resolution must be a positive multiple of 16")

    def architecture(self, num_identities: int) -> Architecture:
        c = self.channels
        return Architecture(
            img_ch=self.img_ch,
            resolution=self.resolution,
            enc_widths=(32, 64, c, c),
            dec_widths=(c, 64, 32),
            num_identities=num_identities,
        )


@dataclass(frozen=True)
class ExplainConfig:
    threshold: float | str = "auto"
    mode: str = "isolated"

    def __post_init__(self):
        if self.threshold != "auto" and (isinstance(self.threshold, bool) or not isinstance(self.threshold, (int, float))):
            raise ConfigError('explain.threshold must be a number or "auto"')
        if self.mode not in ("isolated", "cumulative"):
            raise ConfigError("explain.mode must be isolated or cumulative")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    hiding: HidingGameConfig = field(default_factory=HidingGameConfig)

    def to_dict(self) -> dict:
        t = self.train
        return {
            "model": {"img_ch": self.model.img_ch, "channels": self.model.channels, "resolution": self.model.resolution},
            "train": {
                "epochs": t.epochs, "batch": t.batch, "lr_sgd": t.lr_sgd, "momentum": t.momentum,
                "lr_adam": t.lr_adam, "lambda": t.lam, "margin": t.margin, "scale": t.scale,
                "seed": t.seed, "val_fraction": t.val_fraction, "grad_clip": t.grad_clip,
            },
            "explain": {"threshold": self.explain.threshold, "mode": self.explain.mode},
            "hiding": {
                "sigma": self.hiding.sigma, "percentages": list(self.hiding.percentages),
                "kernel_size": self.hiding.kernel_size, "seed": self.hiding.seed,
            },
        }


_TYPES: dict[str, dict[str, tuple]] = {
    "model": {"img_ch": (int,), "channels": (int,), "resolution": (int,)},
    "train": {
        "epochs": (int,), "batch": (int,), "lr_sgd": (int, float), "momentum": (int, float),
        "lr_adam": (int, float), "lambda": (int, float), "margin": (int, float), "scale": (int, float),
        "seed": (int,), "val_fraction": (int, float), "grad_clip": (int, float),
    },
    "explain": {"threshold": (int, float, str), "mode": (str,)},
    "hiding": {"sigma": (int, float), "percentages": (list,), "kernel_size": (int, type(None)), "seed": (int,)},
}


def _check_section(name: str, doc: Any) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = _TYPES[name]
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}")
        if isinstance(value, bool) or not isinstance(value, allowed[key]):
            raise ConfigError(f"{name}.{key} has invalid type {type(value).__name__}")
    return dict(doc)


def parse_config(doc: Any) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_TYPES)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    try:
        model = ModelConfig(**_check_section("model", doc.get("model", {})))
        tr = _check_section("train", doc.get("train", {}))
        if "lambda" in tr:
            tr["lam"] = tr.pop("lambda")
        train = TrainConfig(**tr)
        explain = ExplainConfig(**_check_section("explain", doc.get("explain", {})))
        hd = _check_section("hiding", doc.get("hiding", {}))
        if "percentages" in hd:
            if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in hd["percentages"]):
                raise ConfigError("hiding.percentages must be numbers")
            hd["percentages"] = tuple(hd["percentages"])
        hiding = HidingGameConfig(**hd)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(model, train, explain, hiding)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply ``section__key=value`` overrides, skipping ``None`` values."""
    doc = cfg.to_dict()
    for name, value in overrides.items():
        if value is None:
            continue
        section, key = name.split("__", 1)
        doc[section][key] = value
    return parse_config(doc)


__all__ = ["ConfigError", "ExplainConfig", "ModelConfig", "RunConfig", "load_config", "parse_config", "with_overrides"]
