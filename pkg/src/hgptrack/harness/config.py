"""Experiment configuration and seed derivation.

The configuration is a YAML mapping; every section is optional and
unknown keys are rejected. Schema with defaults::

    seed: 0                     # root seed for everything below
    out: results                # output directory
    trips:                      # evaluation trips
      synthetic: 20             # count of random scripts (ignored when paths given)
      duration: 40.0            # seconds per synthetic trip
      paths: []                 # trip CSV files (t,x,y[,speed,heading,accel])
    train_trips:                # bank-training trips, same keys as trips
      synthetic: 10
    predictors: [bsm, cs, ca, kf, hgp]
    channel:
      per_grid: [0.0, 0.1, ..., 0.9, 0.95]
      rate_grid: [10, 5, 2, 1]
      replications: 1
      loss_model: bernoulli     # or gilbert-elliott
      burst_length: 4.0
    bank:
      tw: 30                    # samples
      pte_threshold: 0.5        # m
      c_size: 16
      horizon: 10               # steps
      restarts: 4
    predictor:
      history_span: 3.0         # s; null keeps the whole tw window
      min_window: 3
      extend_bank: false
    fcw: {t_d: 1.5, a_req: -5.0}
    noise: {accel_sigma: 1.0}   # m/s^2 on transmitted acceleration
    host: {reaction_delay: 1.0, time_headway: 1.0}   # any IdmParams field
    workers: 1

Seeds are never drawn from a global stream. Each consumer derives its
own from the root seed and a path of integers (module, then cell or
trip, then replication), so adding a trip or a predictor does not shift
any other stream.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..channel import LOSS_MODELS
from ..forecast.predictors import available
from .scenario import IdmParams

DEFAULT_PER_GRID = tuple(round(0.1 * k, 2) for k in range(10)) + (0.95,)
DEFAULT_RATE_GRID = (10, 5, 2, 1)

# first element of every seed path
STREAM_TRAIN_TRIPS = 1
STREAM_TEST_TRIPS = 2
STREAM_NOISE = 3
STREAM_CHANNEL = 4
STREAM_BANK = 5


class ConfigError(ValueError):
    """Configuration violates the documented schema."""


def derive_seed(root: int, *path: int) -> int:
    """A 32-bit seed for the stream at ``path`` below ``root``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class TripSource:
    synthetic: int = 20
    duration: float = 40.0
    paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.synthetic < 0 or self.duration <= 0:
            raise ConfigError("trip count must be non-negative and duration positive")


@dataclass(frozen=True)
class ChannelGrid:
    per_grid: tuple[float, ...] = DEFAULT_PER_GRID
    rate_grid: tuple[float, ...] = DEFAULT_RATE_GRID
    replications: int = 1
    loss_model: str = "bernoulli"
    burst_length: float = 4.0

    def __post_init__(self):
        if any(not 0.0 <= p <= 1.0 for p in self.per_grid):
            raise ConfigError("per_grid values must lie in [0, 1]")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.loss_model not in LOSS_MODELS:
            raise ConfigError(f"loss_model must be one of {LOSS_MODELS}")


@dataclass(frozen=True)
class BankParams:
    tw: int = 30
    pte_threshold: float = 0.5
    c_size: int = 16
    horizon: int = 10
    restarts: int = 4

    def __post_init__(self):
        if self.tw < 5 or self.c_size < 1 or self.horizon < 1 or not self.pte_threshold > 0:
            raise ConfigError("bank parameters out of range")


@dataclass(frozen=True)
class PredictorParams:
    history_span: float | None = 3.0
    min_window: int = 3
    extend_bank: bool = False


@dataclass(frozen=True)
class FcwParams:
    t_d: float = 1.5
    a_req: float = -5.0


@dataclass(frozen=True)
class NoiseParams:
    accel_sigma: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "results"
    trips: TripSource = field(default_factory=TripSource)
    train_trips: TripSource = field(default_factory=lambda: TripSource(synthetic=10))
    predictors: tuple[str, ...] = ("bsm", "cs", "ca", "kf", "hgp")
    channel: ChannelGrid = field(default_factory=ChannelGrid)
    bank: BankParams = field(default_factory=BankParams)
    predictor: PredictorParams = field(default_factory=PredictorParams)
    fcw: FcwParams = field(default_factory=FcwParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    host: IdmParams = field(default_factory=IdmParams)
    workers: int = 1

    def __post_init__(self):
        unknown = [p for p in self.predictors if p not in available()]
        if unknown:
            raise ConfigError(f"unknown predictor(s) {unknown}; known: {available()}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        return _build(cls, d or {}, "")

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from None
        if d is not None and not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(d)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = fields[name].default
        if default is dataclasses.MISSING:
            default = fields[name].default_factory()
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{where}{name}.")
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}{name}: expected a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None
