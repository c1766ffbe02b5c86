"""``key = value`` configuration files.

Keys are the field names of :class:`TrainConfig`, :class:`AugmentSpec` and
:class:`ModelConfig`. Blank lines and ``#`` comments are ignored; list
values (``dilations``, ``filters``, ``fc``) are comma-separated.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .augment import AugmentSpec
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

_LIST_KEYS = {"dilations", "filters", "fc"}


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


_TRAIN = {k: v for k, v in _fields(TrainConfig).items() if k != "augmentation"}
_AUG = _fields(AugmentSpec)
_MODEL = _fields(ModelConfig)


def _convert(key: str, default, raw: str):
    try:
        if key in _LIST_KEYS:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> tuple[TrainConfig, ModelConfig]:
    train_kw, aug_kw, model_kw = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        for table, kw, cls in ((_TRAIN, train_kw, TrainConfig), (_AUG, aug_kw, AugmentSpec),
                               (_MODEL, model_kw, ModelConfig)):
            if key in table:
                if key in kw:
                    raise ConfigError(f"line {lineno}: duplicate key {key}")
                kw[key] = _convert(key, table[key].default, raw)
                break
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        aug = AugmentSpec(**aug_kw)
        return TrainConfig(augmentation=aug, **train_kw), ModelConfig(**model_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> tuple[TrainConfig, ModelConfig]:
    return parse_config(Path(path).read_text())


def dump_config(train: TrainConfig, model: ModelConfig) -> str:
    lines = []
    for obj, skip in ((train, {"augmentation"}), (train.augmentation, set()), (model, set())):
        for f in dataclasses.fields(obj):
            if f.name in skip:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
