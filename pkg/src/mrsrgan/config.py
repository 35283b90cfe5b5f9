"""Experiment configuration: profile presets, JSON config files, flag overrides.

Precedence is built-in defaults < profile preset < config file < CLI flags.
The experiment name fixes the degradation and generator upscale factors;
conflicting explicit values are rejected before any compute.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .degradation import DegradationSpec
from .errors import ConfigError
from .losses import LossWeights
from .metrics import MetricParams
from .model import DiscriminatorConfig, GeneratorConfig
from .training import TrainConfig

EXPERIMENTS = ("iso4", "iso8", "aniso_synthetic", "aniso_volume")
PROFILES = ("paper", "toy")

DEFAULTS = {
    "experiment": "iso4",
    "profile": "paper",
    "aniso_factor": 8,
    "seed": 0,
    "output_dir": "runs/default",
    "data": {"sources": [], "prepared_dir": None},
    "degradation": {"antialias": True, "a": -0.5, "boundary": "edge"},
    "metrics": {},
    "baselines": ["iso4", "aniso8"],
}


def experiment_factors(experiment: str, aniso_factor: int = 8) -> tuple[int, int]:
    if experiment == "iso4":
        return 4, 4
    if experiment == "iso8":
        return 8, 8
    if experiment in ("aniso_synthetic", "aniso_volume"):
        if aniso_factor not in (2, 4, 8):
            raise ConfigError(f"aniso_factor must be 2, 4 or 8, got {aniso_factor}")
        return aniso_factor, 1
    raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")


def load_profile(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {PROFILES}")
    text = resources.files("mrsrgan").joinpath("profiles", f"{name}.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    profile: str
    seed: int
    output_dir: Path
    image_size: int
    aniso_factor: int
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    train: TrainConfig
    degradation: DegradationSpec
    metrics: MetricParams
    extractor: dict
    data: dict
    baselines: list
    max_train_slices: int | None
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def factors(self) -> tuple[int, int]:
        return self.degradation.factor_h, self.degradation.factor_w

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "profile": self.profile,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "image_size": self.image_size,
            "aniso_factor": self.aniso_factor,
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "train": self.train.to_dict(),
            "degradation": self.degradation.to_dict(),
            "metrics": self.metrics.to_dict(),
            "extractor": self.extractor,
            "data": self.data,
            "baselines": self.baselines,
            "max_train_slices": self.max_train_slices,
        }


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a merged raw dict into an :class:`ExperimentConfig`."""
    try:
        experiment = raw["experiment"]
        fh, fw = experiment_factors(experiment, int(raw.get("aniso_factor", 8)))
        image_size = int(raw["image_size"])
        if image_size % 16 or image_size % fh or image_size % fw:
            raise ConfigError(f"image_size {image_size} must be divisible by 16 and by the factors ({fh}, {fw})")

        deg = dict(raw.get("degradation", {}))
        for key, expected in (("factor_h", fh), ("factor_w", fw)):
            if key in deg and int(deg[key]) != expected:
                raise ConfigError(f"experiment {experiment} requires degradation {key}={expected}, got {deg[key]}")
            deg[key] = expected
        degradation = DegradationSpec(**deg)

        gen = dict(raw.get("generator", {}))
        if "stages" in gen:
            gcfg = GeneratorConfig.from_dict(gen)
            if gcfg.scale != (fh, fw):
                raise ConfigError(f"experiment {experiment} requires generator scale ({fh}, {fw}), got {gcfg.scale}")
        else:
            gcfg = GeneratorConfig.for_factors(fh, fw, **gen)
        dcfg = DiscriminatorConfig(image_size=image_size, **raw.get("discriminator", {}))

        tr = dict(raw.get("train", {}))
        tr.setdefault("seed", int(raw.get("seed", 0)))
        tr["degradation"] = degradation
        tr["loss_weights"] = LossWeights(**tr.get("loss_weights", {}))
        tcfg = TrainConfig(**tr)

        return ExperimentConfig(
            experiment=experiment,
            profile=raw.get("profile", "paper"),
            seed=int(raw.get("seed", 0)),
            output_dir=Path(raw.get("output_dir", "runs/default")),
            image_size=image_size,
            aniso_factor=int(raw.get("aniso_factor", 8)),
            generator=gcfg,
            discriminator=dcfg,
            train=tcfg,
            degradation=degradation,
            metrics=MetricParams(**raw.get("metrics", {})),
            extractor=dict(raw.get("extractor", {"kind": "stub"})),
            data=dict(raw.get("data", {})),
            baselines=list(raw.get("baselines", [])),
            max_train_slices=raw.get("max_train_slices"),
            raw=raw,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path=None, profile: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    file_cfg = {}
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    overrides = overrides or {}
    name = profile or overrides.get("profile") or file_cfg.get("profile") or DEFAULTS["profile"]
    raw = deep_merge(DEFAULTS, load_profile(name))
    raw = deep_merge(raw, file_cfg)
    raw = deep_merge(raw, overrides)
    raw["profile"] = name
    return build_config(raw)
