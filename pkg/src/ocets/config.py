"""Experiment configuration: TOML file, ``--set key=value`` overrides, round-trip dump."""

from __future__ import annotations

import dataclasses
import math
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import RANGE_MODES
from .errors import ConfigError
from .evaluate import NORMALIZATIONS
from .loss import KINDS
from .model import HEADS
from .targetdist import FAMILIES

ABLATION_AXES = ("family", "bins", "sigma", "lookback", "snr", "loss")


@dataclass
class DataSection:
    path: str | None = None
    name: str | None = None
    date_column: str = "date"
    columns: tuple[str, ...] | None = None
    range_mode: str = "zero_one"
    split: tuple[float, ...] = (0.6, 0.2, 0.2)
    stride: int = 1
    epsilon: float = 1e-8
    norm_scope: str = "window"  # or "global": min/max of the training segment
    target_norm: str = "lookback"  # or "own": each horizon scaled by its own min/max


@dataclass
class FixtureSection:
    n_rows: int = 2000
    n_features: int = 2
    periods: tuple[float, ...] = (24.0, 37.0)
    amplitudes: tuple[float, ...] = (1.0, 0.6)
    offset: float = 3.0
    trend: float = 0.0
    noise_std: float = 0.0


@dataclass
class NoiseSection:
    enabled: bool = False
    snr_db: float = math.inf
    seed: int = 0


@dataclass
class TptSection:
    family: str = "truncated_gaussian"
    k: int = 100
    sigma: float = 0.01
    nu: float = 5.0


@dataclass
class ModelSection:
    ma_window: int = 25
    head: str = "shared"
    jitter: float = 1e-2


@dataclass
class TrainSection:
    batch_size: int = 32
    epochs: int = 15
    lr: float = 0.005
    patience: int = 5  # 0 disables early stopping
    lr_decay: float = 0.5
    shuffle: bool = True
    cache_targets: bool = True


@dataclass
class LossSection:
    kind: str = "oce"


@dataclass
class EvalSection:
    normalization: str = "per_element"
    save_predictions: bool = True
    max_prediction_windows: int = 0  # 0 writes every test window
    q_alpha: float = 2.850


@dataclass
class SweepSection:
    lookbacks: tuple[int, ...] = (336,)
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    sigmas: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    bins: tuple[int, ...] = (30, 45, 75, 100)
    families: tuple[str, ...] = FAMILIES
    snrs: tuple[float, ...] = (-3.0, 0.0, 3.0, 10.0, 20.0)
    losses: tuple[str, ...] = ("ce", "oce")


@dataclass
class InfluenceSection:
    n_instances: int = 1000
    max_d: int = 5
    max_k: int = 5
    residual_norm_samples: int = 1_000_000
    instances_path: str | None = None
    kappas: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0, 100.0)
    lambda_mins: tuple[float, ...] = (0.01, 0.05, 0.1, 0.25)
    residuals: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "out"
    data: DataSection = field(default_factory=DataSection)
    fixture: FixtureSection = field(default_factory=FixtureSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    tpt: TptSection = field(default_factory=TptSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    influence: InfluenceSection = field(default_factory=InfluenceSection)

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        _choice("data.range_mode", self.data.range_mode, RANGE_MODES)
        _choice("data.norm_scope", self.data.norm_scope, ("window", "global"))
        _choice("data.target_norm", self.data.target_norm, ("lookback", "own"))
        _choice("tpt.family", self.tpt.family, FAMILIES)
        _choice("model.head", self.model.head, HEADS)
        _choice("loss.kind", self.loss.kind, KINDS)
        _choice("eval.normalization", self.eval.normalization, NORMALIZATIONS)
        for fam in self.sweep.families:
            _choice("sweep.families", fam, FAMILIES)
        for kind in self.sweep.losses:
            _choice("sweep.losses", kind, KINDS)
        if len(self.data.split) != 3:
            raise ConfigError("data.split needs three fractions")
        for name in ("lookbacks", "horizons", "sigmas", "bins", "families", "snrs", "losses"):
            if not getattr(self.sweep, name):
                raise ConfigError(f"sweep.{name} must be non-empty")
        if any(h < 1 for h in self.sweep.horizons) or any(w < 1 for w in self.sweep.lookbacks):
            raise ConfigError("sweep.horizons and sweep.lookbacks must be >= 1")
        if check_files:
            for key, p in (("data.path", self.data.path), ("influence.instances_path", self.influence.instances_path)):
                if p is not None and not Path(p).is_file():
                    raise ConfigError(f"{key}: no such file {p}")
        return self

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))

    def dumps(self) -> str:
        return tomli_w.dumps(_to_toml(self.to_dict()))


def _choice(key: str, value, options) -> None:
    if value not in options:
        raise ConfigError(f"{key}: {value!r} is not one of {tuple(options)}")


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, tuple):
        return list(d)
    return d


def _to_toml(d):
    if isinstance(d, dict):
        return {k: _to_toml(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_to_toml(v) for v in d]
    return d


def _coerce(tp, value, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(_coerce(args[0], v, key) for v in value)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be a table")
        return _build(tp, value, key + ".")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + u for u in sorted(unknown))}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    return cls(**kwargs)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(tree: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not a table")
    node[parts[-1]] = _parse_value(text.strip())


def from_dict(tree: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, tree)


def loads(text: str, overrides=()) -> ExperimentConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    for ov in overrides:
        apply_override(tree, ov)
    return from_dict(tree)


def load(path: str | Path | None, overrides=()) -> ExperimentConfig:
    if path is None:
        return loads("", overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cfg = loads(p.read_text(encoding="utf-8"), overrides)
    # relative data paths resolve against the config file's directory
    for section, attr in ((cfg.data, "path"), (cfg.influence, "instances_path")):
        val = getattr(section, attr)
        if val is not None and not Path(val).is_absolute() and not Path(val).exists():
            cand = p.parent / val
            if cand.exists():
                setattr(section, attr, str(cand))
    return cfg
