"""Experiment configuration: nested dataclasses loaded from YAML (or JSON).

Defaults describe the desk-scale experiment: a 4 x 6 x 3 m room with
rt60 = 0.2 s, a 0.18 m microphone pair at (2, 1, 1.4), and a 1 x 1 x 0.5 m
source volume sampled every 5 cm.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class RoomConfig:
    dims: list[float] = field(default_factory=lambda: [4.0, 6.0, 3.0])
    rt60: float = 0.2
    sample_rate: float = 16000.0
    speed_of_sound: float = 343.0
    air_length: int | None = None


@dataclass
class MicsConfig:
    positions: list[list[float]] = field(default_factory=lambda: [[1.91, 1.0, 1.4], [2.09, 1.0, 1.4]])


@dataclass
class GridConfig:
    origin: list[float] = field(default_factory=lambda: [1.5, 2.0, 1.0])
    extent: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.5])
    spacing: float = 0.05


@dataclass
class MeasurementConfig:
    mode: str = "analytic"
    duration: float = 1.0
    snr_db: float | None = None
    seed: int = 0
    normalize_direct: bool = False
    layout: str = "ild_sincos"
    split: str = "alternating"


@dataclass
class LinearConfig:
    mode: str = "axis"
    neighbors: int = 2
    power: float = 1.0
    axis: int = 2


@dataclass
class AffineConfig:
    n_regions: int = 64
    seed: int = 0
    ridge: float = 1e-6


@dataclass
class DnnModelConfig:
    hidden: list[int] = field(default_factory=lambda: [1024, 1024, 1024])
    normalize_direct: bool = False
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_floor: float = 1e-5
    seed: int = 0
    renorm_in_training: bool = True
    dtype: str = "float32"
    min_steps_per_epoch: int = 40


@dataclass
class ModelConfig:
    kind: str = "dnn"
    linear: LinearConfig = field(default_factory=LinearConfig)
    affine: AffineConfig = field(default_factory=AffineConfig)
    dnn: DnnModelConfig = field(default_factory=DnnModelConfig)


@dataclass
class EvalConfig:
    target: str = "random"
    n_eval_poses: int = 1000
    eval_seed: int = 1234
    n_dev_poses: int = 300
    dev_seed: int = 4321


@dataclass
class SweepConfig:
    models: list[str] = field(default_factory=lambda: ["linear", "dnn"])
    factors: list[int] = field(default_factory=lambda: [1, 2, 4])
    snrs: list[float] = field(default_factory=lambda: [30.0, 20.0, 10.0])
    snr_factor: int = 2
    repeats: int = 200
    repeat_position: list[float] = field(default_factory=lambda: [1.75, 2.4, 1.2])


@dataclass
class ExperimentConfig:
    room: RoomConfig = field(default_factory=RoomConfig)
    mics: MicsConfig = field(default_factory=MicsConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: str = "runs/desk"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> ExperimentConfig:
        _check(len(self.room.dims) == 3 and min(self.room.dims) > 0, "room.dims", "three positive lengths")
        _check(self.room.rt60 >= 0, "room.rt60", "must be non-negative")
        _check(self.room.sample_rate > 0, "room.sample_rate", "must be positive")
        _check(self.room.speed_of_sound > 0, "room.speed_of_sound", "must be positive")
        _check(len(self.mics.positions) == 2, "mics.positions", "exactly two microphones")
        _check(self.grid.spacing > 0, "grid.spacing", "must be positive")
        _check(len(self.grid.origin) == 3, "grid.origin", "three coordinates")
        _check(len(self.grid.extent) == 3 and min(self.grid.extent) >= 0, "grid.extent", "three non-negative lengths")
        _check(self.measurement.mode in ("analytic", "noise_excited"), "measurement.mode", "analytic or noise_excited")
        _check(self.measurement.duration > 0, "measurement.duration", "must be positive")
        _check(self.measurement.layout in ("ild_sincos", "real_imag"), "measurement.layout", "ild_sincos or real_imag")
        _check(self.measurement.split in ("alternating", "random"), "measurement.split", "alternating or random")
        _check(self.model.kind in MODEL_KINDS, "model.kind", f"one of {MODEL_KINDS}")
        _check(self.model.linear.mode in ("axis", "idw"), "model.linear.mode", "axis or idw")
        _check(self.model.affine.n_regions >= 1, "model.affine.n_regions", "must be at least 1")
        _check(self.model.dnn.patience >= 1, "model.dnn.patience", "must be at least 1")
        _check(self.model.dnn.batch_size >= 1, "model.dnn.batch_size", "must be at least 1")
        _check(self.eval.target in ("random", "test_split"), "eval.target", "random or test_split")
        _check(self.eval.n_eval_poses >= 2, "eval.n_eval_poses", "must be at least 2")
        _check(self.eval.n_dev_poses >= 1, "eval.n_dev_poses", "must be at least 1")
        _check(all(m in MODEL_KINDS for m in self.sweep.models), "sweep.models", f"entries from {MODEL_KINDS}")
        _check(all(int(f) >= 1 for f in self.sweep.factors), "sweep.factors", "factors must be >= 1")
        return self


MODEL_KINDS = ("free_field", "linear", "affine", "dnn")


def _check(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(key, message)


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            if default is None and fields[name].default is not dataclasses.MISSING:
                default = fields[name].default
            if default is None:
                # optional scalars: take the type from the annotation
                default = {"float | None": 0.0, "int | None": 0}.get(str(fields[name].type))
            kwargs[name] = _coerce(value, default, sub)
    return cls(**kwargs)


def _coerce(value, default, key: str):
    """Match scalar types to the field default; YAML 1.1 reads ``1e-5`` as a string."""
    if value is None or default is None or isinstance(default, (list, str)):
        return value
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(key, f"expected a number, got {value!r}")
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {value!r}") from None
    if kind is int and out != float(value):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return out


def config_from_dict(data: dict | None) -> ExperimentConfig:
    try:
        cfg = _build(ExperimentConfig, data or {}, "")
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Read a YAML/JSON config; a manifest emitted by ``gen`` is accepted too."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"cannot parse: {exc}") from None
    if isinstance(data, dict) and "config" in data and "files" in data:
        data = data["config"]
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)
