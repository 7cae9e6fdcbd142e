"""Run configuration: one YAML/JSON file, every field defaulted, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Optional

import yaml

from .cppo import CvarConfig
from .data import DEFAULT_INDICATORS
from .env import EnvConfig
from .errors import ConfigError
from .infusion import InfusionConfig
from .policy import PolicyConfig
from .ppo import TrainConfig
from .scoring import EndpointConfig


@dataclass(frozen=True)
class DataConfig:
    prices: Optional[str] = None
    news: Optional[str] = None
    scores: Optional[str] = None
    benchmark: Optional[str] = None
    benchmark_ticker: Optional[str] = None
    fill_policy: str = "ffill"
    indicators: tuple[str, ...] = DEFAULT_INDICATORS
    train_start: Optional[date] = None
    train_end: Optional[date] = None

    def __post_init__(self):
        if self.fill_policy not in ("ffill", "strict"):
            raise ConfigError("data.fill_policy must be 'ffill' or 'strict'")
        object.__setattr__(self, "indicators", tuple(self.indicators))


@dataclass(frozen=True)
class BacktestConfig:
    start: Optional[date] = None
    end: Optional[date] = None
    cvar_alpha: float = 0.05
    rachev_tail: float = 0.05

    def __post_init__(self):
        for name in ("cvar_alpha", "rachev_tail"):
            if not (0.0 < getattr(self, name) < 1.0):
                raise ConfigError(f"backtest.{name} must lie in (0, 1)")


SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "env": EnvConfig,
    "policy": PolicyConfig,
    "train": TrainConfig,
    "cvar": CvarConfig,
    "infusion": InfusionConfig,
    "backtest": BacktestConfig,
    "endpoint": EndpointConfig,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cvar: CvarConfig = field(default_factory=CvarConfig)
    infusion: InfusionConfig = field(default_factory=InfusionConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    seed: int = 42

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        doc = dict(doc or {})
        unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"config section '{name}' must be a mapping")
            kwargs[name] = _build(klass, section, name)
        seed = doc.get("seed", 42)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        cfg = cls(**kwargs, seed=seed)
        # the global seed drives training unless the train section pins its own
        if "seed" not in (doc.get("train") or {}):
            cfg = cfg.with_section("train", seed=seed)
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc)

    def with_section(self, name: str, **changes) -> "RunConfig":
        """Copy with fields of one section replaced (flag overrides go through here)."""
        if name == "seed":
            raise ConfigError("use with_seed()")
        current = getattr(self, name)
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        merged = {**_as_dict(current), **changes}
        return dataclasses.replace(self, **{name: _build(SECTIONS[name], merged, name)})

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed).with_section("train", seed=seed)

    def to_dict(self, redact: bool = True) -> dict:
        out: dict[str, Any] = {name: _as_dict(getattr(self, name)) for name in SECTIONS}
        if redact and out["endpoint"].get("api_key"):
            out["endpoint"]["api_key"] = "***"
        out["seed"] = self.seed
        return _jsonable(out)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, date):
        return x.isoformat()
    return x


_DATE_FIELDS = {"train_start", "train_end", "start", "end"}


def _coerce(name: str, value, default):
    if value is None:
        return None
    if name in _DATE_FIELDS:
        if isinstance(value, date):
            return value
        try:
            return date.fromisoformat(str(value))
        except ValueError:
            raise ConfigError(f"{name}: not an ISO date: {value!r}") from None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, float) and isinstance(value, str):
        # YAML 1.1 reads exponents without a decimal point (1e-08) as strings
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _build(klass, section: dict, where: str):
    names = {f.name: f for f in fields(klass)}
    unknown = sorted(set(section) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    defaults = klass()
    kwargs = {k: _coerce(k, v, getattr(defaults, k)) for k, v in section.items()}
    try:
        return klass(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in '{where}': {exc}") from None
