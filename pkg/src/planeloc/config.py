"""Flat ``key=value`` experiment configuration."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .qlearn import TrainerConfig


class ConfigError(ValueError):
    pass


_TRAINER_KEYS = {f.name: f for f in dataclasses.fields(TrainerConfig)}


@dataclass
class ExperimentConfig:
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: str = ""
    out: str = ""
    n_train: int = 40
    n_val: int = 10
    n_test: int = 20
    align: bool = True

    def keys(self) -> list[str]:
        return list(_TRAINER_KEYS) + [f.name for f in dataclasses.fields(self) if f.name != "trainer"]

    def echo(self) -> str:
        lines = []
        for k in self.keys():
            v = getattr(self.trainer, k) if k in _TRAINER_KEYS else getattr(self, k)
            lines.append(f"{k}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return from_pairs({**dict(_pairs(self.echo())), **{k: _fmt(v) for k, v in kw.items()}})


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(value: str, proto, key: str):
    try:
        if isinstance(proto, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(proto, int):
            return int(value)
        if isinstance(proto, float):
            return float(value)
        if isinstance(proto, tuple):
            return tuple(float(x) for x in value.split(","))
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _pairs(text: str):
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        yield k.strip(), v.strip()


def from_pairs(pairs: dict) -> ExperimentConfig:
    base = ExperimentConfig()
    tkw, ekw = {}, {}
    for k, v in pairs.items():
        if k in _TRAINER_KEYS:
            tkw[k] = _parse(v, getattr(base.trainer, k), k)
        elif k in ("data", "out", "n_train", "n_val", "n_test", "align"):
            ekw[k] = _parse(v, getattr(base, k), k)
        else:
            raise ConfigError(f"unknown config key {k!r}")
    try:
        trainer = TrainerConfig(**tkw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(trainer, **ekw)
    if min(cfg.n_train, cfg.n_val, cfg.n_test) < 0 or cfg.n_train < 1:
        raise ConfigError("split sizes must be non-negative with n_train >= 1")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    pairs = {}
    for k, v in _pairs(text):
        if k in pairs:
            raise ConfigError(f"duplicate key {k!r}")
        pairs[k] = v
    return from_pairs(pairs)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
