"""Hybrid GPS/INS orchestration: aided fusion, outage bridging, metrics.

While GPS is valid the filter fuses real fixes (online-training mode, with
IMU windows logged). When fixes go invalid the run enters prediction mode:
the aiding model predicts the per-epoch position increment from the
trailing IMU window, the increments accumulate from the last fused position
into a pseudo-GPS fix, and the filter consumes that fix as if it were real
(height dropped, measurement noise inflated). On GPS recovery the mode
switches back and the anchor clears.
"""
from __future__ import annotations

import copy
import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autograd import Adam, Tape, Tensor, backward, optimizer_step
from . import autograd as ag
from .datasets import GpsFix, OutageSchedule, TrajectoryDataset, WindowSample
from .geodesy import (
    GeodeticPosition,
    dcm_to_euler,
    geodetic_to_local_ne,
    local_ne_to_geodetic,
)
from .insmech import NavState
from .kalman import GpsInsConfig, GpsInsFilter


class ModelWindowUnavailable(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


class Mode(enum.Enum):
    ONLINE_TRAINING = "online-training"
    PREDICTION = "prediction"


@dataclass
class ModeState:
    """Current operating mode; the anchor exists only in prediction mode."""

    mode: Mode
    anchor: GeodeticPosition | None = None

    def __post_init__(self):
        if (self.mode is Mode.PREDICTION) != (self.anchor is not None):
            raise ValueError("anchor present iff mode is prediction")


@dataclass(frozen=True)
class FinetuneConfig:
    """Optional in-run refinement on the logged window buffer."""

    every_s: float = 0.0  # 0 disables
    steps: int = 4
    batch: int = 8
    lr: float = 1e-4
    buffer: int = 256


def accumulate_pseudo_gps(anchor: GeodeticPosition,
                          increments) -> GeodeticPosition:
    """Fold predicted (north, east) increments onto the anchor position.

    Each increment converts to geodetic at the running position, so feeding
    the true per-epoch increments telescopes back to the true positions to
    within numerical precision.
    """
    pos = anchor
    for inc in increments:
        n, e = float(inc[0]), float(inc[1])
        if not (math.isfinite(n) and math.isfinite(e)):
            raise ValueError("non-finite pseudo-GPS increment")
        pos = local_ne_to_geodetic(pos, n, e)
    return pos


class ZeroPredictor:
    """Emits zero increments; pins the pseudo-GPS at the anchor."""

    name = "zero"

    def predict(self, window: np.ndarray, t: float) -> np.ndarray:
        return np.zeros(2)


class TrueIncrementPredictor:
    """Oracle emitting the true per-epoch increments from the truth states.

    Validates the fusion path independently of any learned model.
    """

    name = "oracle"

    def __init__(self, d: TrajectoryDataset, epoch_dt: float = 1.0):
        if d.truth is None:
            raise ValueError("oracle predictor needs truth states")
        self._by_time = {round(s.t, 6): nav.position
                         for s, nav in zip(d.imu, d.truth)}
        self.epoch_dt = epoch_dt

    def predict(self, window: np.ndarray, t: float) -> np.ndarray:
        now = self._by_time.get(round(t, 6))
        prev = self._by_time.get(round(t - self.epoch_dt, 6))
        if now is None or prev is None:
            raise AlignmentError(f"no truth at epoch {t}")
        return np.array(geodetic_to_local_ne(prev, now))


class ModelPredictor:
    """Adapts a trained increment model to the predictor interface."""

    def __init__(self, model, name: str | None = None):
        self.model = model
        self.name = name or getattr(model, "kind", "model")

    def predict(self, window: np.ndarray, t: float) -> np.ndarray:
        return self.model.predict(window, t)


@dataclass
class MethodTrajectory:
    """Epoch-sampled navigation solution of one method."""

    name: str
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    h: np.ndarray
    prediction_entries: int = 0


@dataclass(frozen=True)
class OutageMetrics:
    start: float
    end: float
    max_east: float
    max_north: float
    max_horizontal: float
    rmse_east: float
    rmse_north: float


@dataclass
class RunReport:
    """Everything a run produces: trajectories, per-outage errors, curves."""

    methods: dict[str, MethodTrajectory]
    truth: MethodTrajectory
    outages: tuple[tuple[float, float], ...]
    metrics: dict[str, list[OutageMetrics]]
    gps_available_max_horizontal: dict[str, float]
    curves: dict[str, list[np.ndarray]]
    provenance: dict


def _initial_nav(d: TrajectoryDataset) -> NavState:
    if d.truth is not None:
        return d.truth[0]
    from .geodesy import NedVector, euler_to_dcm

    first_fix = next(f for f in d.gps if f.valid)
    return NavState(attitude=euler_to_dcm(d.imu[0].attitude),
                    velocity=NedVector(0.0, 0.0, 0.0),
                    position=first_fix.position)


def _fix_by_imu_index(d: TrajectoryDataset) -> dict[int, GpsFix]:
    imu_t = d.imu_times
    dt = d.imu_dt
    out: dict[int, GpsFix] = {}
    for fix in d.gps:
        i = int(np.searchsorted(imu_t, fix.t - dt / 2.0))
        if i < len(imu_t) and abs(imu_t[i] - fix.t) <= dt / 2.0:
            out[i] = fix
    return out


def _finetune(model, windows: list[tuple[np.ndarray, np.ndarray]],
              cfg: FinetuneConfig, opt: Adam, rng) -> None:
    if len(windows) < cfg.batch:
        return
    params = model.parameters()
    for _ in range(cfg.steps):
        pick = rng.choice(len(windows), size=cfg.batch, replace=False)
        xb = np.stack([windows[i][0] for i in pick])
        yb = np.stack([windows[i][1] for i in pick])
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            pred = model.forward(Tensor(model.normalize(xb)), training=True)
            diff = ag.sub(pred, yb)
            loss = ag.mean(ag.mul(diff, diff))
        backward(tape, loss)
        optimizer_step(params, [p.grad for p in params], opt)


def run_fusion(d: TrajectoryDataset, filter_cfg: GpsInsConfig,
               predictor=None, window_n: int = 0, name: str | None = None,
               pseudo_bypass_kf: bool = False,
               finetune: FinetuneConfig | None = None,
               seed: int = 0) -> MethodTrajectory:
    """Run the fused navigation over a dataset.

    predictor=None holds the filter during outages (the standalone-INS
    baseline); otherwise each invalid GPS epoch consumes one predicted
    increment through the pseudo-GPS chain. With pseudo_bypass_kf the
    pseudo position is reported directly instead of feeding the filter.
    """
    if predictor is not None and window_n < 1:
        raise ValueError("aided runs need the model window length")
    nav = _initial_nav(d)
    filt = GpsInsFilter(filter_cfg, nav.position)
    fixes = _fix_by_imu_index(d)
    mode = ModeState(Mode.ONLINE_TRAINING)
    pseudo_pos: GeodeticPosition | None = None
    entries = 0
    ring: list[np.ndarray] = []
    log_t, log_lat, log_lon, log_h = [], [], [], []

    ft_model = predictor
    ft_windows: list[tuple[np.ndarray, np.ndarray]] = []
    ft_opt: Adam | None = None
    ft_rng = np.random.default_rng(seed)
    ft_last = d.imu[0].t
    prev_fix: GpsFix | None = None
    if finetune and finetune.every_s > 0 and isinstance(predictor, ModelPredictor):
        ft_model = ModelPredictor(copy.deepcopy(predictor.model),
                                  predictor.name)
        predictor = ft_model
        ft_opt = Adam(lr=finetune.lr)

    for k in range(1, len(d.imu)):
        imu = d.imu[k]
        dt = imu.t - d.imu[k - 1].t
        nav = filt.propagate(nav, imu, dt)
        att = dcm_to_euler(nav.attitude)
        ring.append(np.concatenate([[att.roll, att.pitch, att.yaw],
                                    imu.accel, imu.gyro]))
        if len(ring) > max(window_n, 1):
            ring.pop(0)
        fix = fixes.get(k)
        if fix is None:
            log = None
        elif fix.valid:
            if mode.mode is Mode.PREDICTION:
                mode = ModeState(Mode.ONLINE_TRAINING)
                pseudo_pos = None
            nav = filt.correct(nav, fix)
            log = nav.position
            if finetune and finetune.every_s > 0 and window_n >= 1:
                if (prev_fix is not None and prev_fix.valid
                        and len(ring) >= window_n):
                    target = np.array(geodetic_to_local_ne(
                        prev_fix.position, fix.position))
                    ft_windows.append((np.stack(ring[-window_n:]), target))
                    ft_windows = ft_windows[-finetune.buffer:]
                if (ft_opt is not None and imu.t - ft_last >= finetune.every_s):
                    _finetune(ft_model.model, ft_windows, finetune, ft_opt,
                              ft_rng)
                    ft_last = imu.t
            prev_fix = fix
        else:
            if mode.mode is Mode.ONLINE_TRAINING:
                mode = ModeState(Mode.PREDICTION, anchor=nav.position)
                pseudo_pos = mode.anchor
                entries += 1
            if predictor is None:
                log = nav.position  # filter held, pure mechanization
            else:
                if len(ring) < window_n:
                    raise ModelWindowUnavailable(
                        f"outage at t={fix.t} before {window_n} IMU samples")
                window = np.stack(ring[-window_n:])
                inc = predictor.predict(window, fix.t)
                pseudo_pos = accumulate_pseudo_gps(pseudo_pos, [inc])
                if pseudo_bypass_kf:
                    log = pseudo_pos
                else:
                    pseudo_fix = GpsFix(t=fix.t, position=GeodeticPosition(
                        pseudo_pos.lat, pseudo_pos.lon, mode.anchor.h))
                    nav = filt.correct(nav, pseudo_fix, pseudo=True)
                    log = nav.position
            prev_fix = fix
        if fix is not None:
            log_t.append(fix.t)
            log_lat.append(log.lat)
            log_lon.append(log.lon)
            log_h.append(log.h)

    return MethodTrajectory(name=name or (predictor.name if predictor else "ins"),
                            t=np.array(log_t), lat=np.array(log_lat),
                            lon=np.array(log_lon), h=np.array(log_h),
                            prediction_entries=entries)


def run_hybrid(d: TrajectoryDataset, predictor, filter_cfg: GpsInsConfig,
               window_n: int, **kwargs) -> MethodTrajectory:
    """Aided run: pseudo-GPS from predicted increments during outages."""
    return run_fusion(d, filter_cfg, predictor=predictor, window_n=window_n,
                      **kwargs)


def run_pure_ins(d: TrajectoryDataset,
                 filter_cfg: GpsInsConfig) -> MethodTrajectory:
    """Baseline: during outages the filter holds and the INS runs free."""
    return run_fusion(d, filter_cfg, predictor=None, name="ins")


def truth_trajectory(d: TrajectoryDataset) -> MethodTrajectory:
    """Truth states resampled as a trajectory (full IMU rate)."""
    if d.truth is None:
        raise ValueError("dataset has no truth states")
    return MethodTrajectory(
        name="truth",
        t=d.imu_times.copy(),
        lat=np.array([s.position.lat for s in d.truth]),
        lon=np.array([s.position.lon for s in d.truth]),
        h=np.array([s.position.h for s in d.truth]))


def _interp_truth(truth: MethodTrajectory, t: np.ndarray):
    if t[0] < truth.t[0] - 1e-6 or t[-1] > truth.t[-1] + 1e-6:
        raise AlignmentError("trajectory extends beyond the truth span")
    return (np.interp(t, truth.t, truth.lat),
            np.interp(t, truth.t, truth.lon),
            np.interp(t, truth.t, truth.h))


def _error_series(traj: MethodTrajectory, truth: MethodTrajectory):
    lat_t, lon_t, h_t = _interp_truth(truth, traj.t)
    north = np.empty(len(traj.t))
    east = np.empty(len(traj.t))
    for i in range(len(traj.t)):
        ref = GeodeticPosition(lat_t[i], lon_t[i], h_t[i])
        pos = GeodeticPosition(traj.lat[i], traj.lon[i], traj.h[i])
        n, e = geodetic_to_local_ne(ref, pos)
        north[i] = n
        east[i] = e
    return north, east


def evaluate(trajectories: dict[str, MethodTrajectory],
             truth: MethodTrajectory, schedule: OutageSchedule,
             provenance: dict | None = None) -> RunReport:
    """Per-outage max/RMSE east-north errors for every method.

    Error curves sample the GPS epochs from outage start through the first
    recovery epoch (duration x rate + 1 rows at 1 Hz).
    """
    metrics: dict[str, list[OutageMetrics]] = {}
    curves: dict[str, list[np.ndarray]] = {}
    gps_avail: dict[str, float] = {}
    for name, traj in trajectories.items():
        north, east = _error_series(traj, truth)
        horiz = np.hypot(north, east)
        per_outage = []
        method_curves = []
        outage_mask = np.zeros(len(traj.t), dtype=bool)
        for start, end in schedule.intervals:
            sel = (traj.t >= start - 1e-9) & (traj.t <= end + 1e-9)
            outage_mask |= (traj.t >= start - 1e-9) & (traj.t < end - 1e-9)
            if not np.any(sel):
                raise AlignmentError(
                    f"no epochs inside outage [{start}, {end})")
            per_outage.append(OutageMetrics(
                start=start, end=end,
                max_east=float(np.max(np.abs(east[sel]))),
                max_north=float(np.max(np.abs(north[sel]))),
                max_horizontal=float(np.max(horiz[sel])),
                rmse_east=float(np.sqrt(np.mean(east[sel] ** 2))),
                rmse_north=float(np.sqrt(np.mean(north[sel] ** 2)))))
            method_curves.append(
                np.column_stack([traj.t[sel], east[sel], north[sel]]))
        metrics[name] = per_outage
        curves[name] = method_curves
        gps_avail[name] = float(np.max(horiz[~outage_mask])) if np.any(
            ~outage_mask) else 0.0
    return RunReport(methods=dict(trajectories), truth=truth,
                     outages=tuple(schedule.intervals), metrics=metrics,
                     gps_available_max_horizontal=gps_avail, curves=curves,
                     provenance=provenance or {})


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def emit_report(report: RunReport, out_dir) -> list[Path]:
    """Write metrics.json, per-outage error-curve CSVs and trajectories.

    The file set and contents are a pure function of the report, so a rerun
    with the same configuration and seed reproduces them byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    payload = {
        "provenance": dict(sorted(report.provenance.items())),
        "version": __version__,
        "outages": [[s, e] for s, e in report.outages],
        "gps_available_max_horizontal_m": report.gps_available_max_horizontal,
        "methods": {
            name: {
                f"outage_{i + 1}": {
                    "start_s": m.start,
                    "end_s": m.end,
                    "max_east_m": m.max_east,
                    "max_north_m": m.max_north,
                    "max_horizontal_m": m.max_horizontal,
                    "rmse_east_m": m.rmse_east,
                    "rmse_north_m": m.rmse_north,
                }
                for i, m in enumerate(rows)
            }
            for name, rows in report.metrics.items()
        },
    }
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(payload, sort_keys=True, indent=2)
                            + "\n")
    written.append(metrics_path)

    for name, method_curves in sorted(report.curves.items()):
        for i, curve in enumerate(method_curves):
            path = out / f"errors_{name}_outage{i + 1}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t", "east_err", "north_err"])
                for row in curve:
                    writer.writerow([f"{v:.17g}" for v in row])
            written.append(path)

    epochs = report.methods[next(iter(report.methods))].t if report.methods else None
    for name, traj in sorted(report.methods.items()):
        path = out / f"trajectory_{name}.csv"
        _write_trajectory(path, traj)
        written.append(path)
    truth = report.truth
    if epochs is not None:
        keep = np.isin(np.round(truth.t, 6), np.round(epochs, 6))
        truth = MethodTrajectory("truth", truth.t[keep], truth.lat[keep],
                                 truth.lon[keep], truth.h[keep])
    truth_path = out / "trajectory_truth.csv"
    _write_trajectory(truth_path, truth)
    written.append(truth_path)
    return written


def _write_trajectory(path: Path, traj: MethodTrajectory) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "lat", "lon", "h"])
        for i in range(len(traj.t)):
            writer.writerow([f"{traj.t[i]:.17g}", f"{traj.lat[i]:.17g}",
                             f"{traj.lon[i]:.17g}", f"{traj.h[i]:.17g}"])


def load_trajectory_csv(path) -> MethodTrajectory:
    rows = np.genfromtxt(path, delimiter=",", skip_header=1)
    rows = np.atleast_2d(rows)
    name = Path(path).stem.replace("trajectory_", "")
    return MethodTrajectory(name=name, t=rows[:, 0], lat=rows[:, 1],
                            lon=rows[:, 2], h=rows[:, 3])
