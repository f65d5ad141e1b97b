"""Augmentation policies and the named presets.

A policy always starts with random-resized-crop and horizontal flip (the base
augmentations); ``transforms`` lists the appearance/geometry transforms applied
after them, in order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ConfigError, InvalidInputError
from . import transforms as T

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "jitter": {"strengths": (0.4, 0.4, 0.4, 0.1), "p": 0.8},
    "grayscale": {"p": 0.2},
    "blur": {"sigma_range": (0.1, 2.0), "p": 0.5},
    "solarize": {"threshold": 0.5, "p": 0.2},
    "posterize": {"bits_range": (4, 7), "p": 0.2},
    "affine": {
        "max_rotation": 15.0,
        "max_translate": 0.1,
        "scale_range": (0.9, 1.1),
        "max_shear": 10.0,
        "p": 0.5,
    },
}

TRANSFORM_FNS = {
    "jitter": T.color_jitter,
    "grayscale": T.grayscale,
    "blur": T.gaussian_blur,
    "solarize": T.solarize,
    "posterize": T.posterize,
    "affine": T.affine,
}

PRESETS: dict[str, tuple[str, ...]] = {
    "base": (),
    "dino": ("jitter", "grayscale", "blur", "solarize"),
    "dino-nosolarize": ("jitter", "grayscale", "blur"),
    "plant": ("jitter", "posterize", "affine"),
    "plant-grayscale": ("jitter", "posterize", "affine", "grayscale"),
    "plant-blur": ("jitter", "posterize", "affine", "blur"),
}


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


@dataclass(frozen=True)
class TransformSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return float(self.params["p"])

    @classmethod
    def make(cls, name: str, **overrides) -> "TransformSpec":
        if name not in DEFAULT_PARAMS:
            raise ConfigError(f"unknown transform {name!r}; known: {sorted(DEFAULT_PARAMS)}")
        unknown = set(overrides) - set(DEFAULT_PARAMS[name])
        if unknown:
            raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
        params = {**DEFAULT_PARAMS[name], **{k: _tuplify(v) for k, v in overrides.items()}}
        return cls(name, params)

    def __call__(self, img: np.ndarray, rng: np.random.Generator, log: list | None = None) -> np.ndarray:
        return TRANSFORM_FNS[self.name](img, rng, log=log, **self.params)

    def to_dict(self) -> dict:
        return {"name": self.name, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}}


@dataclass(frozen=True)
class AugPolicy:
    transforms: tuple[TransformSpec, ...] = ()
    global_size: int = 224
    local_size: int = 96
    n_global: int = 2
    n_local: int = 10
    global_scale: tuple[float, float] = (0.32, 1.0)
    local_scale: tuple[float, float] = (0.05, 0.32)
    ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    local_transforms: bool = True
    name: str = "custom"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_global < 2:
            raise InvalidInputError(f"n_global must be >= 2, got {self.n_global}")
        if self.n_local < 0:
            raise InvalidInputError(f"n_local must be >= 0, got {self.n_local}")
        if self.global_size < 2 or self.local_size < 2:
            raise InvalidInputError("view sizes must be >= 2")
        for label, (lo, hi) in (("global_scale", self.global_scale), ("local_scale", self.local_scale)):
            if not 0.0 < lo <= hi <= 1.0:
                raise InvalidInputError(f"{label} must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        if not 0.0 <= self.flip_p <= 1.0:
            raise InvalidInputError(f"flip_p must be in [0, 1], got {self.flip_p}")
        for spec in self.transforms:
            if spec.name not in TRANSFORM_FNS:
                raise InvalidInputError(f"unknown transform {spec.name!r}")
            if not 0.0 <= spec.p <= 1.0:
                raise InvalidInputError(f"{spec.name}: probability must be in [0, 1], got {spec.p}")

    @property
    def transform_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.transforms)

    def replace(self, **changes) -> "AugPolicy":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "transforms": [t.to_dict() for t in self.transforms],
            "global_size": self.global_size,
            "local_size": self.local_size,
            "n_global": self.n_global,
            "n_local": self.n_local,
            "global_scale": list(self.global_scale),
            "local_scale": list(self.local_scale),
            "ratio": list(self.ratio),
            "flip_p": self.flip_p,
            "local_transforms": self.local_transforms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AugPolicy":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown augmentation policy keys: {sorted(unknown)}")
        specs = []
        for item in data.pop("transforms", []):
            item = dict(item)
            specs.append(TransformSpec.make(item.pop("name"), **item))
        data = {k: _tuplify(v) for k, v in data.items()}
        return cls(transforms=tuple(specs), **data)


def preset(name: str, transform_overrides: dict | None = None, **policy_fields) -> AugPolicy:
    """Build a named preset; ``transform_overrides`` maps transform name -> param overrides."""
    if name not in PRESETS:
        raise ConfigError(f"unknown augmentation preset {name!r}; available presets: {', '.join(PRESETS)}")
    overrides = transform_overrides or {}
    unknown = set(overrides) - set(PRESETS[name])
    if unknown:
        raise ConfigError(f"preset {name!r} has no transforms {sorted(unknown)}")
    specs = tuple(TransformSpec.make(t, **overrides.get(t, {})) for t in PRESETS[name])
    return AugPolicy(transforms=specs, name=name, **policy_fields)
