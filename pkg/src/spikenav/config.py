"""Run configuration: one JSON document that drives the CLI end to end.

Every key mirrors a constructor argument of the underlying dataclasses; the
documented key set lives in the README. Unknown keys are rejected so typos
fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datasets import (
    GpsNoiseSpec,
    OutageSchedule,
    SensorErrorSpec,
    TrajectoryProfile,
)
from .geodesy import GeodeticPosition, Wgs84Params
from .insmech import ImuNoiseSpec
from .kalman import GpsInsConfig
from .pipeline import FinetuneConfig
from .spikenet import LifParams, SpikeNetConfig


@dataclass(frozen=True)
class TrainingParams:
    """Hyperparameters shared by both model kinds."""

    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    val_fraction: float = 0.2
    window_stride: int = 1
    mlp_hidden: int = 256


@dataclass(frozen=True)
class DatasetSource:
    """Either CSV paths or a synthetic-generation recipe."""

    imu_path: str | None = None
    gps_path: str | None = None
    truth_path: str | None = None
    profile: TrajectoryProfile | None = None
    errors: SensorErrorSpec = SensorErrorSpec()
    gps_noise: GpsNoiseSpec = GpsNoiseSpec()
    duration: float = 600.0
    imu_rate: float = 100.0
    gps_rate: float = 1.0

    @property
    def synthetic(self) -> bool:
        return self.profile is not None


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs, serializable to JSON."""

    dataset: DatasetSource = DatasetSource()
    outages: tuple[tuple[float, float], ...] = ()
    filter: GpsInsConfig = GpsInsConfig()
    net: SpikeNetConfig = SpikeNetConfig()
    training: TrainingParams = TrainingParams()
    finetune: FinetuneConfig = FinetuneConfig()
    seed: int = 0
    out_dir: str = "runs/out"

    def schedule(self) -> OutageSchedule:
        return OutageSchedule(tuple(tuple(iv) for iv in self.outages))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True,
                                         indent=2) + "\n")


def _build(cls, data: dict, casts: dict | None = None):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    if casts:
        for key, fn in casts.items():
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = fn(kwargs[key])
    return cls(**kwargs)


def _tuple3(v):
    return tuple(float(x) for x in v)


def run_config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    dataset = _build(DatasetSource, data.pop("dataset", {}), {
        "profile": lambda p: _build(TrajectoryProfile, p, {
            "origin": lambda o: GeodeticPosition(**o),
            "waypoints": lambda w: tuple(tuple(float(x) for x in pt)
                                         for pt in w),
        }),
        "errors": lambda e: _build(SensorErrorSpec, e, {
            "gyro_bias": _tuple3, "accel_bias": _tuple3}),
        "gps_noise": lambda g: _build(GpsNoiseSpec, g),
    })
    filter_cfg = _build(GpsInsConfig, data.pop("filter", {}), {
        "imu_noise": lambda n: _build(ImuNoiseSpec, n),
        "params": lambda p: _build(Wgs84Params, p)})
    net = _build(SpikeNetConfig, data.pop("net", {}), {
        "lif": lambda l: _build(LifParams, l)})
    training = _build(TrainingParams, data.pop("training", {}))
    finetune = _build(FinetuneConfig, data.pop("finetune", {}))
    outages = tuple(tuple(float(x) for x in iv)
                    for iv in data.pop("outages", ()))
    rest = _build(RunConfig, {**data, "dataset": dataset, "outages": outages,
                              "filter": filter_cfg, "net": net,
                              "training": training, "finetune": finetune})
    return rest


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(json.loads(Path(path).read_text()))
