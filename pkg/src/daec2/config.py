"""Run configuration: a single YAML file with nested sections, strict key
checking, and a resolved echo written into every run directory.

Sections: ``data`` (dataset roots and splits), ``network``, ``train``,
``weights``, ``augment_frames``, ``augment_events``, ``output``. Any key a
section does not define is rejected by name. ``--set section.key=value``
overrides are applied before validation.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Optional

import yaml

from .augment import AugmentationPolicy
from .event_io import DatasetManifest, load_manifest
from .losses import LossWeights
from .nets import NetworkConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or out-of-range configuration."""


@dataclass
class DataConfig:
    frames_root: str = ""
    events_root: str = ""
    train_split: str = "train"
    test_split: Optional[str] = "test"
    sensor_width: Optional[int] = None
    sensor_height: Optional[int] = None


@dataclass
class OutputConfig:
    dir: str = "runs"
    run_name: str = "run"


@dataclass
class RunConfig:
    data: DataConfig
    network: NetworkConfig
    train: TrainConfig
    frame_policy: AugmentationPolicy
    event_policy: AugmentationPolicy
    output: OutputConfig

    @property
    def run_dir(self) -> Path:
        return Path(self.output.dir) / self.output.run_name


_SECTIONS = {
    "data": DataConfig,
    "network": NetworkConfig,
    "train": TrainConfig,
    "weights": LossWeights,
    "augment_frames": AugmentationPolicy,
    "augment_events": AugmentationPolicy,
    "output": OutputConfig,
}


def _build_section(name: str, cls, payload: dict):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key '{name}.{sorted(unknown)[0]}' in configuration")
    coerced = {}
    for f in fields(cls):
        if f.name not in payload:
            continue
        value = payload[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section '{name}': {e}") from e


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` strings onto the raw mapping."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"section {section!r} is not a mapping")
        parsed = yaml.safe_load(value)
        if isinstance(parsed, str) and re.fullmatch(
                r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?", parsed):
            # YAML leaves exponent forms like 1e18 as strings
            parsed = float(parsed) if any(c in parsed for c in ".eE") else int(parsed)
        raw[section][key] = parsed
    return raw


def parse_config(path, overrides: Iterable[str] = ()) -> RunConfig:
    """Load, override, validate, and resolve one configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping of sections")
    raw = apply_overrides(raw, overrides)

    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section '{sorted(unknown)[0]}' in {path}")
    for name, payload in raw.items():
        if payload is None:
            raw[name] = {}
        elif not isinstance(payload, dict):
            raise ConfigError(f"section '{name}' must be a mapping")

    data = _build_section("data", DataConfig, raw.get("data", {}))
    network = _build_section("network", NetworkConfig, raw.get("network", {}))
    train_payload = dict(raw.get("train", {}))
    if "weights" in raw:
        weights = _build_section("weights", LossWeights, raw["weights"])
        train_payload["weights"] = weights
    train = _build_section("train", TrainConfig, train_payload)
    frame_policy = _build_section("augment_frames", AugmentationPolicy,
                                  raw.get("augment_frames", {}))
    event_policy = _build_section("augment_events", AugmentationPolicy,
                                  raw.get("augment_events", {}))
    output = _build_section("output", OutputConfig, raw.get("output", {}))

    if not data.frames_root or not data.events_root:
        raise ConfigError("data.frames_root and data.events_root are required")
    for key, root in (("frames_root", data.frames_root),
                      ("events_root", data.events_root)):
        if not Path(root).is_dir():
            raise ConfigError(f"data.{key} does not exist: {root}")
    try:
        frame_policy.validate()
        event_policy.validate()
    except ValueError as e:
        raise ConfigError(f"invalid augmentation policy: {e}") from e

    return RunConfig(data=data, network=network, train=train,
                     frame_policy=frame_policy, event_policy=event_policy,
                     output=output)


def resolved_dict(cfg: RunConfig) -> dict:
    """The fully resolved configuration as plain nested mappings."""
    train = cfg.train.to_dict()
    weights = train.pop("weights")
    return {
        "data": dataclasses.asdict(cfg.data),
        "network": cfg.network.to_dict(),
        "train": train,
        "weights": weights,
        "augment_frames": dataclasses.asdict(cfg.frame_policy),
        "augment_events": dataclasses.asdict(cfg.event_policy),
        "output": dataclasses.asdict(cfg.output),
    }


def write_resolved(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(resolved_dict(cfg), f, sort_keys=False)


def manifests_from_config(cfg: RunConfig) -> Dict[str, DatasetManifest]:
    """The train manifests plus test manifests when a test split is configured."""
    w, h = cfg.data.sensor_width, cfg.data.sensor_height
    manifests = {
        "frames_train": load_manifest(cfg.data.frames_root, cfg.data.train_split),
        "events_train": load_manifest(cfg.data.events_root, cfg.data.train_split,
                                      width=w, height=h),
    }
    if cfg.data.test_split:
        frames_test = Path(cfg.data.frames_root) / cfg.data.test_split
        events_test = Path(cfg.data.events_root) / cfg.data.test_split
        if frames_test.is_dir():
            manifests["frames_test"] = load_manifest(cfg.data.frames_root,
                                                     cfg.data.test_split)
        if events_test.is_dir():
            manifests["events_test"] = load_manifest(cfg.data.events_root,
                                                     cfg.data.test_split,
                                                     width=w, height=h)
    return manifests
