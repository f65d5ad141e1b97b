"""Run configuration: YAML files, dotted command-line overrides and resolution.

A run config is a nested mapping whose shape is fixed by :func:`defaults`.
Files and overrides are merged on top of the defaults; any key that does not
exist in the defaults is rejected.  The merged mapping is what gets written to
the resolved-config snapshot.
"""

from __future__ import annotations

import copy
import dataclasses
import os
from pathlib import Path
from typing import Any

import yaml

from .encoder import EncoderConfig
from .errors import ConfigError, InvalidInputError
from .image_aug import DEFAULT_PARAMS, PRESETS, AugPolicy, preset
from .losses import LossWeights
from .train_engine import TrainConfig

OUTPUT_ROOT_ENV = "FGSSL_OUTPUT_ROOT"
SNAPSHOT_NAME = "resolved_config.yaml"

# train-section keys that live elsewhere in the run config
_TRAIN_EXCLUDED = {"seed", "encoder", "aug", "loss", "contrastive_loss"}


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def defaults() -> dict:
    train_defaults = TrainConfig.__dataclass_fields__
    tc = TrainConfig(aug=preset("base"))
    policy = AugPolicy()
    return {
        "seed": 0,
        "workers": 1,
        "output_dir": None,
        "dataset": None,
        "encoder": EncoderConfig().to_dict(),
        "aug": {
            "preset": "dino",
            "params": {},
            **{k: _plain(v) for k, v in policy.to_dict().items() if k not in ("name", "transforms")},
        },
        "loss": dataclasses.asdict(LossWeights()),
        "train": {
            **{k: _plain(getattr(tc, k)) for k in train_defaults if k not in _TRAIN_EXCLUDED},
            "resume": None,
        },
        "contrastive": {"loss": "simclr"},
        "embed": {"checkpoint": None, "which": "teacher", "resolution": None, "output": "embeddings.emb"},
        "eval": {
            "protocol": "simpleshot",
            "embeddings": [],
            "shots": [1, 5],
            "n_way": None,
            "m_query": 10,
            "n_episodes": 20,
            "metric": "euclidean",
            "renormalize": False,
            "k": 20,
            "tau": 0.07,
        },
        "preview": {"image": None, "tile": 96, "n_global": 2, "n_local": 4},
        "synthetic": {"per_class": 100, "size": 64, "n_classes": 6},
    }


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Recursively merge ``update`` into a copy of ``base``, rejecting unknown keys."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        dotted = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(out[key], dict) and key != "params":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} expects a mapping")
            out[key] = merge(out[key], value, dotted + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return data


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def set_dotted(cfg: dict, dotted: str, value: Any) -> None:
    """Set ``a.b.c`` in ``cfg``; the path must already exist (``aug.params`` excepted)."""
    parts = dotted.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        if part == "params" and parts[i - 1 : i] == ["aug"]:
            node = node[part]
            for sub in parts[i + 1 : -1]:
                node = node.setdefault(sub, {})
            node[parts[-1]] = value
            return
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(node[parts[-1]], dict) and parts[-1] != "params":
        raise ConfigError(f"config key {dotted!r} is a section; set one of its fields instead")
    node[parts[-1]] = value


def parse_overrides(tokens: list[str]) -> list[tuple[str, Any]]:
    """``["--train.steps", "5", "--aug.preset=plant"]`` -> ``[("train.steps", 5), ("aug.preset", "plant")]``."""
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok!r} is missing a value")
            raw = tokens[i + 1]
            i += 2
        out.append((key.replace("-", "_") if "." not in key else key, parse_value(raw)))
    return out


def build_config(config_file=None, overrides: list[tuple[str, Any]] = ()) -> dict:
    cfg = defaults()
    if config_file is not None:
        data = load_yaml(config_file)
        data.pop("command", None)  # present in snapshots
        cfg = merge(cfg, data)
    for key, value in overrides:
        set_dotted(cfg, key, value)
    resolve_aug_params(cfg)
    return cfg


def resolve_aug_params(cfg: dict) -> None:
    """Materialise every parameter of the chosen preset's transforms."""
    aug = cfg["aug"]
    name = aug["preset"]
    if name not in PRESETS:
        raise ConfigError(f"unknown augmentation preset {name!r}; available presets: {', '.join(PRESETS)}")
    user = aug.get("params") or {}
    if not isinstance(user, dict):
        raise ConfigError("aug.params must be a mapping of transform name -> parameters")
    # materialised defaults left over from another preset are harmless
    extra = {t for t in set(user) - set(PRESETS[name]) if not (t in DEFAULT_PARAMS and _plain({**DEFAULT_PARAMS[t], **(user[t] or {})}) == _plain(DEFAULT_PARAMS[t]))}
    if extra:
        raise ConfigError(f"aug.params names transforms not in preset {name!r}: {sorted(extra)}")
    resolved = {}
    for t in PRESETS[name]:
        given = user.get(t) or {}
        bad = set(given) - set(DEFAULT_PARAMS[t])
        if bad:
            raise ConfigError(f"unknown parameters for {t}: {sorted(bad)}")
        resolved[t] = _plain({**DEFAULT_PARAMS[t], **given})
    aug["params"] = resolved


# ---------------------------------------------------------------------------
# typed views of the run config


def aug_policy(cfg: dict) -> AugPolicy:
    aug = dict(cfg["aug"])
    name, params = aug.pop("preset"), aug.pop("params")
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()}
    try:
        return preset(name, params, **fields)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"bad augmentation settings: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    data = dict(cfg["train"])
    data.pop("resume")
    data.update(
        seed=cfg["seed"],
        encoder=cfg["encoder"],
        loss=cfg["loss"],
        contrastive_loss=cfg["contrastive"]["loss"],
    )
    data["aug"] = aug_policy(cfg).to_dict()
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"bad training settings: {exc}") from exc


def output_dir(cfg: dict, command: str) -> Path:
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root or "fgssl_runs") / command


def write_snapshot(cfg: dict, out_dir: Path, command: str) -> Path:
    snap = {"command": command, **cfg}
    path = Path(out_dir) / SNAPSHOT_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(_plain(snap), sort_keys=False, default_flow_style=False))
    return path

