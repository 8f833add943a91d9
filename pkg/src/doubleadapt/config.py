"""Run configuration: YAML document, schema-checked, every field defaulted."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .adapter import AdapterConfig
from .engine import ConfigError
from .synth import SynthConfig

MODES = ("doubleadapt", "naive_il", "rolling_retrain")


@dataclass
class DataSection:
    path: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class ScheduleSection:
    r: int = 20
    # inclusive date positions or date labels; None falls back to the fractions
    train_end: int | str | None = None
    valid_end: int | str | None = None
    train_frac: float = 0.5
    valid_frac: float = 0.7


@dataclass
class ModelSection:
    kind: str = "mlp"
    hidden: list = field(default_factory=lambda: [32])


@dataclass
class MetaSection:
    alpha: float = 0.5
    eta_theta: float = 0.001
    eta_phi: float = 0.001
    eta_psi: float = 0.01
    reg_mode: str = "fixed"
    sigma: float = 1.0
    inner_steps: int = 1
    phi_update: str = "meta"


@dataclass
class TrainingSection:
    patience: int = 8
    max_epochs: int = 50
    seed: int = 0
    mode: str = "doubleadapt"
    il_lr: float = 0.001
    il_steps: int = 1
    rr_epochs: int = 5
    rr_lr: float = 0.001


@dataclass
class OutputSection:
    directory: str = "runs/default"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    meta: MetaSection = field(default_factory=MetaSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> None:
        if self.schedule.r < 1:
            raise ConfigError("schedule.r must be >= 1")
        if self.training.mode not in MODES:
            raise ConfigError(f"training.mode must be one of {MODES}, got {self.training.mode!r}")
        if self.training.patience < 1:
            raise ConfigError("training.patience must be >= 1")
        if self.model.kind not in ("mlp", "linear"):
            raise ConfigError(f"model.kind must be mlp|linear, got {self.model.kind!r}")
        if self.meta.phi_update not in ("meta", "inherit"):
            raise ConfigError("meta.phi_update must be meta|inherit")
        if self.meta.reg_mode not in ("fixed", "adaptive"):
            raise ConfigError("meta.reg_mode must be fixed|adaptive")
        if self.data.path is None:
            self.data.synth.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(raw: dict | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc.__class__.__name__})") from None
    return from_dict(raw)


def with_overrides(cfg: RunConfig, seed: int | None = None, mode: str | None = None,
                   out: str | None = None) -> RunConfig:
    raw = cfg.to_dict()
    if seed is not None:
        raw["training"]["seed"] = seed
    if mode is not None:
        raw["training"]["mode"] = mode
    if out is not None:
        raw["output"]["directory"] = out
    return from_dict(raw)
