"""Pipeline configuration: one TOML document with ``--set section.key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .chunking import RansacConfig
from .compensation import SamplingSettings
from .errors import ConfigError

DEFAULTS: dict[str, dict[str, Any]] = {
    "features": {
        "max_keypoints": 1000,
        "ratio": 0.8,
        "matches": "",  # path to a precomputed match CSV; empty = detect and match
    },
    "ransac": {
        "max_iterations": 2000,
        "inlier_threshold": 3.0,
        "min_inliers": 8,
        "seed": 0,
        "confidence": 0.999,
    },
    "trajectory": {
        "reference": "last",
    },
    "chunking": {
        "k": 4,
        "seed": 0,
        "max_iter": 100,
        "n_init": 32,
        "standardize": True,
    },
    "compensation": {
        "chunk_reference": "middle",
        "fill": 0.0,
    },
    "sampling": {
        "mode": "both",
        "seed": 0,
        "frames_per_chunk": 6,
        "clips_per_chunk": 5,
        "crops_per_clip": 5,
        "resize_short": 256,
        "crop": 224,
        "flip_prob": 0.5,
    },
    "head": {
        "prior_mode": "binary",
        "include_action_loss": True,
    },
    # recorded for traceability only; nothing is trained here
    "training": {
        "optimizer": "sgd",
        "learning_rate": 0.1,
        "momentum": 0.9,
        "weight_decay": 0.0001,
        "lr_decay_every_epochs": 200,
        "lr_decay_factor": 0.1,
        "batch_size": 32,
    },
}


def _int(lo=None, hi=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "must be an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
    return check


def _real(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if lo is not None and (v <= lo if lo_open else v < lo):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and (v >= hi if hi_open else v > hi):
            return f"must be {'<' if hi_open else '<='} {hi}"
    return check


def _choice(*options):
    def check(v):
        if v not in options:
            return f"must be one of {', '.join(map(str, options))}"
    return check


def _bool(v):
    if not isinstance(v, bool):
        return "must be true or false"


def _str(v):
    if not isinstance(v, str):
        return "must be a string"


def _reference(v):
    if v in ("first", "last"):
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        return "must be 'first', 'last' or a frame index"


CHECKS: dict[str, dict[str, Callable[[Any], str | None]]] = {
    "features": {"max_keypoints": _int(1), "ratio": _real(0, 1, True, True), "matches": _str},
    "ransac": {
        "max_iterations": _int(1),
        "inlier_threshold": _real(0, lo_open=True),
        "min_inliers": _int(4),
        "seed": _int(0, 2**64 - 1),
        "confidence": _real(0, 1, lo_open=True),
    },
    "trajectory": {"reference": _reference},
    "chunking": {"k": _int(1), "seed": _int(0), "max_iter": _int(1), "n_init": _int(1), "standardize": _bool},
    "compensation": {"chunk_reference": _choice("middle", "first", "last"), "fill": _real(0, 255)},
    "sampling": {
        "mode": _choice("train", "inference", "both"),
        "seed": _int(0),
        "frames_per_chunk": _int(1),
        "clips_per_chunk": _int(1),
        "crops_per_clip": _choice(1, 5),
        "resize_short": _int(1),
        "crop": _int(1),
        "flip_prob": _real(0, 1),
    },
    "head": {"prior_mode": _choice("binary", "frequency"), "include_action_loss": _bool},
    "training": {
        "optimizer": _str,
        "learning_rate": _real(0, lo_open=True),
        "momentum": _real(0, 1),
        "weight_decay": _real(0),
        "lr_decay_every_epochs": _int(1),
        "lr_decay_factor": _real(0, 1, lo_open=True),
        "batch_size": _int(1),
    },
}


class PipelineConfig:
    """Validated nested settings; index as ``cfg["ransac"]["seed"]``."""

    def __init__(self, data: dict | None = None):
        merged = copy.deepcopy(DEFAULTS)
        for section, values in (data or {}).items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, value in values.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                merged[section][key] = value
        self.data = merged
        self.validate()

    def validate(self):
        for section, checks in CHECKS.items():
            for key, check in checks.items():
                msg = check(self.data[section][key])
                if msg:
                    raise ConfigError(f"{section}.{key} {msg} (got {self.data[section][key]!r})")
        s = self.data["sampling"]
        if s["crop"] > s["resize_short"]:
            raise ConfigError("sampling.crop must not exceed sampling.resize_short")

    def __getitem__(self, section):
        return self.data[section]

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        data: dict = {}
        if path is not None:
            try:
                data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"{path}: {exc}") from None
        for item in overrides:
            section, key, value = parse_override(item)
            data.setdefault(section, {})[key] = value
        return cls(data)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def to_json(self) -> dict:
        return copy.deepcopy(self.data)

    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def ransac(self) -> RansacConfig:
        return RansacConfig(**self.data["ransac"])

    def sampling(self) -> SamplingSettings:
        s = self.data["sampling"]
        return SamplingSettings(
            frames_per_chunk=s["frames_per_chunk"],
            clips_per_chunk=s["clips_per_chunk"],
            crops_per_clip=s["crops_per_clip"],
            resize_short=s["resize_short"],
            crop=s["crop"],
            flip_prob=s["flip_prob"],
        )


def parse_override(item: str) -> tuple[str, str, Any]:
    """``"ransac.seed=3"`` -> ``("ransac", "seed", 3)``; bare words stay strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    lhs, raw = item.split("=", 1)
    parts = lhs.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {lhs!r} must be section.key")
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return parts[0], parts[1], value
