"""Dataset ingestion, synthetic trajectory generation and window building.

CSV formats (header row mandatory, SI units, angles in radians):
  IMU:   t,gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z,roll,pitch,yaw
  GPS:   t,lat,lon,h
  truth: t,lat,lon,h,vn,ve,vd,roll,pitch,yaw

An IMU row carries the mean rates over the sampling interval ending at its
timestamp (row 0 only marks the stream origin); the attitude columns are the
attitude as logged by the INS/AHRS at the row time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geodesy import (
    WGS84,
    EulerAngles,
    GeodeticPosition,
    NedVector,
    curvature_radii,
    euler_to_dcm,
    geodetic_to_local_ne,
    gravity_magnitude,
    wrap_pi,
)
from .insmech import ImuSample, NavState

IMU_COLUMNS = ["t", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y",
               "accel_z", "roll", "pitch", "yaw"]
GPS_COLUMNS = ["t", "lat", "lon", "h"]
TRUTH_COLUMNS = ["t", "lat", "lon", "h", "vn", "ve", "vd", "roll", "pitch", "yaw"]

WINDOW_CHANNELS = 9  # (roll, pitch, yaw, f_x, f_y, f_z, w_x, w_y, w_z)

PROFILE_KINDS = ("straight", "circle", "figure-eight", "piecewise-waypoint")


class ParseError(ValueError):
    def __init__(self, path, line: int, column: str, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}: column '{column}': {message}")


class NonMonotonicTime(ValueError):
    pass


class UnknownProfile(ValueError):
    pass


class ScheduleOutOfRange(ValueError):
    pass


class OverlappingIntervals(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class GpsFix:
    """A GPS position fix; valid=False marks an outage epoch."""

    t: float
    position: GeodeticPosition
    valid: bool = True


@dataclass(frozen=True)
class OutageSchedule:
    """Sorted, non-overlapping half-open [start, end) outage intervals [s]."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        prev_end = -math.inf
        for start, end in self.intervals:
            if not end > start:
                raise ValueError(f"interval [{start}, {end}) has no duration")
            if start < prev_end:
                raise OverlappingIntervals(
                    f"interval [{start}, {end}) overlaps the previous one")
            prev_end = end

    def contains(self, t: float) -> bool:
        return any(start <= t < end for start, end in self.intervals)

    @staticmethod
    def from_file(path) -> "OutageSchedule":
        intervals = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(path, line_no, "interval",
                                 "expected 'start end'")
            try:
                intervals.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ParseError(path, line_no, "interval",
                                 f"not numeric: {line!r}") from None
        return OutageSchedule(tuple(intervals))

    def to_file(self, path) -> None:
        Path(path).write_text(
            "".join(f"{s:.15g} {e:.15g}\n" for s, e in self.intervals))


@dataclass(frozen=True)
class SensorErrorSpec:
    """Constant IMU biases plus white noise densities, with the RNG seed.

    Biases in rad/s and m/s^2 per axis; noise densities in rad/s/sqrt(Hz)
    and m/s^2/sqrt(Hz).
    """

    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gyro_noise_std < 0 or self.accel_noise_std < 0:
            raise ValueError("noise densities must be non-negative")


@dataclass(frozen=True)
class GpsNoiseSpec:
    """White GPS position noise, horizontal and vertical std [m]."""

    std_ne: float = 0.0
    std_h: float = 0.0


@dataclass(frozen=True)
class TrajectoryProfile:
    """Closed-form trajectory descriptor for the synthetic generator.

    kind is one of 'straight', 'circle', 'figure-eight',
    'piecewise-waypoint'. Speed in m/s; circle radius in m; figure-eight
    period (one full loop) in s; waypoints as (north, east) meters from the
    origin with cosine-blended heading changes of turn_time seconds.
    """

    kind: str = "figure-eight"
    speed: float = 8.0
    heading: float = 0.0
    radius: float = 200.0
    period: float = 150.0
    waypoints: tuple[tuple[float, float], ...] = ()
    turn_time: float = 8.0
    origin: GeodeticPosition = GeodeticPosition(0.7, 0.2, 100.0)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise UnknownProfile(f"unknown trajectory profile: {self.kind!r}")
        if self.speed <= 0:
            raise ValueError("speed must be positive")


@dataclass
class TrajectoryDataset:
    """Time-ordered IMU and GPS records with optional truth states."""

    imu: list[ImuSample]
    gps: list[GpsFix]
    truth: list[NavState] | None = None

    def __post_init__(self):
        imu_t = np.array([s.t for s in self.imu])
        if len(imu_t) < 2:
            raise InsufficientData("dataset needs at least two IMU samples")
        if np.any(np.diff(imu_t) <= 0):
            raise NonMonotonicTime("IMU timestamps must strictly increase")
        gps_t = np.array([f.t for f in self.gps])
        if len(gps_t) and np.any(np.diff(gps_t) <= 0):
            raise NonMonotonicTime("GPS timestamps must strictly increase")
        if len(gps_t) and (gps_t[0] < imu_t[0] - 1e-9 or gps_t[-1] > imu_t[-1] + 1e-9):
            raise ValueError("GPS timestamps must lie within the IMU span")
        if self.truth is not None and len(self.truth) != len(self.imu):
            raise ValueError("truth states must align with IMU samples")

    @cached_property
    def imu_times(self) -> np.ndarray:
        return np.array([s.t for s in self.imu])

    @cached_property
    def gps_times(self) -> np.ndarray:
        return np.array([f.t for f in self.gps])

    @cached_property
    def imu_dt(self) -> float:
        return float(np.median(np.diff(self.imu_times)))

    @cached_property
    def window_matrix(self) -> np.ndarray:
        """Per-row network channels (roll, pitch, yaw, f, w), shape (M, 9)."""
        rows = np.empty((len(self.imu), WINDOW_CHANNELS))
        for i, s in enumerate(self.imu):
            rows[i, 0:3] = (s.attitude.roll, s.attitude.pitch, s.attitude.yaw)
            rows[i, 3:6] = s.accel
            rows[i, 6:9] = s.gyro
        return rows


@dataclass(frozen=True)
class WindowSample:
    """Training sample: a window of IMU rows and the position increment.

    inputs holds raw channel values (models z-normalize with statistics from
    the training split); target is the (north, east) increment in meters
    between the GPS fixes bracketing the step ending at t_end.
    """

    inputs: np.ndarray
    target: np.ndarray
    t_end: float
    t_prev: float


def _parse_csv(path, columns: list[str]) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, columns[0], "empty file") from None
        if [c.strip() for c in header] != columns:
            raise ParseError(path, 1, header[0] if header else "",
                             f"header must be {','.join(columns)}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ParseError(path, line_no, columns[min(len(row), len(columns)) - 1],
                                 f"expected {len(columns)} fields, got {len(row)}")
            values = []
            for col, cell in zip(columns, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(path, line_no, col,
                                     f"not numeric: {cell!r}") from None
            rows.append(values)
    if not rows:
        raise ParseError(path, 2, columns[0], "no data rows")
    return np.array(rows)


def load_csv(imu_path, gps_path, truth_path=None) -> TrajectoryDataset:
    """Load a dataset from the documented CSV files."""
    imu_rows = _parse_csv(imu_path, IMU_COLUMNS)
    if np.any(np.diff(imu_rows[:, 0]) <= 0):
        raise NonMonotonicTime(f"{imu_path}: timestamps must strictly increase")
    imu = [ImuSample(t=r[0], gyro=r[1:4], accel=r[4:7],
                     attitude=EulerAngles(r[7], r[8], r[9]))
           for r in imu_rows]

    gps_rows = _parse_csv(gps_path, GPS_COLUMNS)
    if np.any(np.diff(gps_rows[:, 0]) <= 0):
        raise NonMonotonicTime(f"{gps_path}: timestamps must strictly increase")
    gps = [GpsFix(t=r[0], position=GeodeticPosition(r[1], r[2], r[3]))
           for r in gps_rows]

    truth = None
    if truth_path is not None:
        truth_rows = _parse_csv(truth_path, TRUTH_COLUMNS)
        truth = [NavState(attitude=euler_to_dcm(EulerAngles(r[7], r[8], r[9])),
                          velocity=NedVector(r[4], r[5], r[6]),
                          position=GeodeticPosition(r[1], r[2], r[3]))
                 for r in truth_rows]
    return TrajectoryDataset(imu=imu, gps=gps, truth=truth)


def _write_csv(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([f"{v:.17g}" for v in row])


def save_csv(d: TrajectoryDataset, imu_path, gps_path, truth_path=None) -> None:
    """Write a dataset back to the documented CSV files."""
    _write_csv(imu_path, IMU_COLUMNS,
               ([s.t, *s.gyro, *s.accel, s.attitude.roll, s.attitude.pitch,
                 s.attitude.yaw] for s in d.imu))
    _write_csv(gps_path, GPS_COLUMNS,
               ([f.t, f.position.lat, f.position.lon, f.position.h]
                for f in d.gps))
    if truth_path is not None:
        if d.truth is None:
            raise ValueError("dataset has no truth states to save")
        from .geodesy import dcm_to_euler

        rows = []
        for s in d.truth:
            e = dcm_to_euler(s.attitude)
            rows.append([0.0, s.position.lat, s.position.lon, s.position.h,
                         s.velocity.north, s.velocity.east, s.velocity.down,
                         e.roll, e.pitch, e.yaw])
        for row, imu in zip(rows, d.imu):
            row[0] = imu.t
        _write_csv(truth_path, TRUTH_COLUMNS, rows)


def _profile_kinematics(profile: TrajectoryProfile, t: np.ndarray):
    """Planar kinematics at times t: n, e, vn, ve, an, ae, yaw, yaw_rate."""
    s = profile.speed
    if profile.kind == "straight":
        ch, sh = math.cos(profile.heading), math.sin(profile.heading)
        zeros = np.zeros_like(t)
        return (s * ch * t, s * sh * t, np.full_like(t, s * ch),
                np.full_like(t, s * sh), zeros, zeros,
                np.full_like(t, wrap_pi(profile.heading)), zeros)
    if profile.kind == "circle":
        w = s / profile.radius
        th = w * t
        n = profile.radius * np.sin(th)
        e = profile.radius * (1.0 - np.cos(th))
        vn, ve = s * np.cos(th), s * np.sin(th)
        an, ae = -s * w * np.sin(th), s * w * np.cos(th)
        yaw = np.arctan2(ve, vn)
        return n, e, vn, ve, an, ae, yaw, np.full_like(t, w)
    if profile.kind == "figure-eight":
        w = 2.0 * math.pi / profile.period
        amp_n = s / (w * math.sqrt(2.0))
        amp_e = s / (2.0 * w * math.sqrt(2.0))
        n = amp_n * np.sin(w * t)
        e = amp_e * np.sin(2.0 * w * t)
        vn = amp_n * w * np.cos(w * t)
        ve = 2.0 * amp_e * w * np.cos(2.0 * w * t)
        an = -amp_n * w * w * np.sin(w * t)
        ae = -4.0 * amp_e * w * w * np.sin(2.0 * w * t)
        yaw = np.arctan2(ve, vn)
        rate = (vn * ae - ve * an) / (vn * vn + ve * ve)
        return n, e, vn, ve, an, ae, yaw, rate
    if profile.kind == "piecewise-waypoint":
        return _waypoint_kinematics(profile, t)
    raise UnknownProfile(f"unknown trajectory profile: {profile.kind!r}")


def _waypoint_kinematics(profile: TrajectoryProfile, t: np.ndarray):
    """Constant-speed waypoint legs with cosine-blended heading changes.

    Heading and its rate are closed-form; position comes from a dense
    trapezoid integration of the velocity on the request grid (the grid the
    generator uses is uniform, keeping the integral consistent to sub-mm).
    """
    if len(profile.waypoints) < 1:
        raise ValueError("piecewise-waypoint profile needs waypoints")
    pts = [(0.0, 0.0), *profile.waypoints]
    legs = []
    for (n0, e0), (n1, e1) in zip(pts[:-1], pts[1:]):
        length = math.hypot(n1 - n0, e1 - e0)
        if length <= 0:
            raise ValueError("repeated waypoint")
        legs.append((math.atan2(e1 - e0, n1 - n0), length / profile.speed))

    # heading profile over time: hold each leg heading, blend at boundaries
    bounds = np.cumsum([dur for _, dur in legs])
    headings = [h for h, _ in legs]
    tau = profile.turn_time

    def heading_at(times):
        hh = np.full_like(times, headings[0], dtype=float)
        rate = np.zeros_like(times, dtype=float)
        for i in range(len(headings) - 1):
            t0 = bounds[i] - tau / 2.0
            delta = wrap_pi(headings[i + 1] - headings[i])
            frac = np.clip((times - t0) / tau, 0.0, 1.0)
            hh = hh + delta * (1.0 - np.cos(math.pi * frac)) / 2.0
            inside = (frac > 0.0) & (frac < 1.0)
            rate = rate + np.where(
                inside, delta * math.pi / (2.0 * tau) * np.sin(math.pi * frac), 0.0)
        return hh, rate

    yaw, yaw_rate = heading_at(t)
    vn = profile.speed * np.cos(yaw)
    ve = profile.speed * np.sin(yaw)
    an = -profile.speed * np.sin(yaw) * yaw_rate
    ae = profile.speed * np.cos(yaw) * yaw_rate
    n = np.concatenate([[0.0], np.cumsum((vn[1:] + vn[:-1]) / 2.0 * np.diff(t))])
    e = np.concatenate([[0.0], np.cumsum((ve[1:] + ve[:-1]) / 2.0 * np.diff(t))])
    wrapped = np.array([wrap_pi(float(y)) for y in yaw])
    return n, e, vn, ve, an, ae, wrapped, yaw_rate


def generate_synthetic(profile: TrajectoryProfile, errors: SensorErrorSpec,
                       duration: float, rates: tuple[float, float] = (100.0, 1.0),
                       gps_noise: GpsNoiseSpec = GpsNoiseSpec(),
                       params=WGS84) -> TrajectoryDataset:
    """Generate truth states, ideal-then-corrupted IMU and noisy GPS fixes.

    The ideal IMU is the analytic inverse of the mechanization equations
    evaluated at interval midpoints; biases and white noise are then added
    per the error spec. Deterministic for a fixed seed.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    f_imu, f_gps = rates
    dt = 1.0 / f_imu
    n_steps = int(round(duration * f_imu))
    sample_t = np.arange(n_steps + 1) * dt
    # rate evaluation points: midpoints of each interval; row 0 is a
    # placeholder evaluated at t=0 (it drives no integration step)
    rate_t = np.concatenate([[0.0], sample_t[1:] - dt / 2.0])

    origin = profile.origin
    r_m0, r_n0 = curvature_radii(origin.lat, params)
    rng = np.random.default_rng(errors.seed)

    def flat_to_geodetic(n, e):
        lat = origin.lat + n / (r_m0 + origin.h)
        lon = origin.lon + e / ((r_n0 + origin.h) * math.cos(origin.lat))
        return lat, lon

    # ideal IMU at the rate evaluation points
    n_m, e_m, vn_m, ve_m, an_m, ae_m, yaw_m, rate_m = _profile_kinematics(profile, rate_t)
    lat_m, _ = flat_to_geodetic(n_m, e_m)
    h = origin.h
    sin_l, cos_l, tan_l = np.sin(lat_m), np.cos(lat_m), np.tan(lat_m)
    den = 1.0 - params.e2 * sin_l ** 2
    r_mm = params.a * (1.0 - params.e2) / den ** 1.5
    r_nm = params.a / np.sqrt(den)
    w_ie = np.stack([params.omega_e * cos_l, np.zeros_like(lat_m),
                     -params.omega_e * sin_l], axis=1)
    w_en = np.stack([ve_m / (r_nm + h), -vn_m / (r_mm + h),
                     -ve_m * tan_l / (r_nm + h)], axis=1)
    v = np.stack([vn_m, ve_m, np.zeros_like(vn_m)], axis=1)
    a = np.stack([an_m, ae_m, np.zeros_like(an_m)], axis=1)
    g = np.array([gravity_magnitude(float(l), h, params) for l in lat_m])
    g_n = np.stack([np.zeros_like(g), np.zeros_like(g), g], axis=1)
    f_n = a + np.cross(2.0 * w_ie + w_en, v) - g_n
    w_in = w_ie + w_en

    cy, sy = np.cos(yaw_m), np.sin(yaw_m)
    # body = Rz(yaw)^T @ nav for the flat (roll = pitch = 0) profiles
    f_b = np.stack([cy * f_n[:, 0] + sy * f_n[:, 1],
                    -sy * f_n[:, 0] + cy * f_n[:, 1],
                    f_n[:, 2]], axis=1)
    w_b = np.stack([cy * w_in[:, 0] + sy * w_in[:, 1],
                    -sy * w_in[:, 0] + cy * w_in[:, 1],
                    w_in[:, 2] + rate_m], axis=1)

    gyro_meas = w_b + np.asarray(errors.gyro_bias)
    accel_meas = f_b + np.asarray(errors.accel_bias)
    if errors.gyro_noise_std > 0:
        gyro_meas = gyro_meas + rng.normal(
            scale=errors.gyro_noise_std * math.sqrt(f_imu), size=w_b.shape)
    if errors.accel_noise_std > 0:
        accel_meas = accel_meas + rng.normal(
            scale=errors.accel_noise_std * math.sqrt(f_imu), size=f_b.shape)

    # truth states and logged attitude at the sample times
    n_s, e_s, vn_s, ve_s, _, _, yaw_s, _ = _profile_kinematics(profile, sample_t)
    lat_s, lon_s = flat_to_geodetic(n_s, e_s)

    imu = [ImuSample(t=float(sample_t[k]), gyro=gyro_meas[k], accel=accel_meas[k],
                     attitude=EulerAngles(0.0, 0.0, float(yaw_s[k])))
           for k in range(n_steps + 1)]
    truth = [NavState(attitude=euler_to_dcm(EulerAngles(0.0, 0.0, float(yaw_s[k]))),
                      velocity=NedVector(float(vn_s[k]), float(ve_s[k]), 0.0),
                      position=GeodeticPosition(float(lat_s[k]), float(lon_s[k]), h))
             for k in range(n_steps + 1)]

    gps_every = int(round(f_imu / f_gps))
    gps = []
    for k in range(0, n_steps + 1, gps_every):
        lat, lon, hh = float(lat_s[k]), float(lon_s[k]), h
        if gps_noise.std_ne > 0 or gps_noise.std_h > 0:
            dn, de = rng.normal(scale=gps_noise.std_ne or 0.0, size=2)
            dh = rng.normal(scale=gps_noise.std_h or 0.0)
            r_mk, r_nk = curvature_radii(lat, params)
            lat += dn / (r_mk + hh)
            lon += de / ((r_nk + hh) * math.cos(lat))
            hh += dh
        gps.append(GpsFix(t=float(sample_t[k]),
                          position=GeodeticPosition(lat, lon, hh)))
    return TrajectoryDataset(imu=imu, gps=gps, truth=truth)


def inject_outages(d: TrajectoryDataset, schedule: OutageSchedule) -> TrajectoryDataset:
    """Invalidate GPS fixes inside the scheduled intervals (half-open)."""
    t0, t1 = d.imu[0].t, d.imu[-1].t
    for start, end in schedule.intervals:
        if start < t0 - 1e-9 or end > t1 + 1e-9:
            raise ScheduleOutOfRange(
                f"interval [{start}, {end}) outside dataset span [{t0}, {t1}]")
    gps = [GpsFix(f.t, f.position, valid=False) if f.valid and schedule.contains(f.t)
           else f for f in d.gps]
    return TrajectoryDataset(imu=d.imu, gps=gps, truth=d.truth)


def make_windows(d: TrajectoryDataset, n: int, stride: int = 1) -> list[WindowSample]:
    """Pair trailing N-row IMU windows with per-epoch GPS increments.

    The window for GPS epoch j covers the N IMU rows ending at that epoch
    (rows whose intervals span the last N*dt seconds); the target is the
    local north/east offset from the previous fix to this one. Windows
    touching any invalid fix are excluded. With GPS at every one of L IMU
    rows and stride 1 this yields L - N samples.
    """
    if n < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    imu_t = d.imu_times
    dt = d.imu_dt
    mat = d.window_matrix
    samples: list[WindowSample] = []
    eligible = 0
    for j in range(1, len(d.gps), stride):
        fix = d.gps[j]
        prev = d.gps[j - 1]
        i_end = int(np.searchsorted(imu_t, fix.t - dt / 2.0))
        if i_end >= len(imu_t) or abs(imu_t[i_end] - fix.t) > dt / 2.0:
            continue
        i_start = i_end - n + 1
        if i_start < 1:
            continue
        eligible += 1
        if not (fix.valid and prev.valid):
            continue
        window_t0 = imu_t[i_start - 1]
        overlapped = [f for f in d.gps if window_t0 < f.t <= fix.t]
        if any(not f.valid for f in overlapped):
            continue
        target = np.array(geodetic_to_local_ne(prev.position, fix.position))
        samples.append(WindowSample(inputs=mat[i_start:i_end + 1].copy(),
                                    target=target, t_end=fix.t, t_prev=prev.t))
    if eligible == 0:
        raise InsufficientData(
            f"no GPS epoch has {n} preceding IMU samples")
    return samples
