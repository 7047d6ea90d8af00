"""Linear Kalman filtering and the loosely coupled 15-state GPS/INS filter.

The GPS/INS filter runs closed-loop: after each measurement update the
estimated navigation errors are fed back into the INS solution, the bias
estimates are absorbed into persistent IMU compensation terms, and the error
state is reset to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import GpsFix
from .geodesy import (
    WGS84,
    Dcm,
    GeodeticPosition,
    NedVector,
    Wgs84Params,
    curvature_radii,
    orthonormalize,
    skew,
    wrap_pi,
)
from .insmech import (
    BA_X,
    BG_X,
    DH,
    DLAT,
    DLON,
    DV_D,
    DV_E,
    DV_N,
    PHI_D,
    PHI_E,
    PHI_N,
    STATE_DIM,
    ErrorModelMatrices,
    ImuNoiseSpec,
    ImuSample,
    NavState,
    build_error_model,
    discretize,
    mechanize_step,
)

DEG = math.pi / 180.0


class DimensionMismatch(ValueError):
    pass


class SingularInnovation(RuntimeError):
    pass


class StaleGps(RuntimeError):
    pass


class LargeMisalignment(RuntimeError):
    pass


@dataclass(frozen=True)
class KfState:
    """State estimate and covariance; P symmetric within 1e-10."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if x.ndim != 1 or p.shape != (x.size, x.size):
            raise DimensionMismatch(f"state {x.shape} vs covariance {p.shape}")
        if np.max(np.abs(p - p.T)) > 1e-10:
            raise ValueError("covariance is not symmetric within 1e-10")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class KfModel:
    """Standard linear-Gaussian system matrices; b may be None (no control)."""

    f: np.ndarray
    h: np.ndarray
    q: np.ndarray
    r: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        n = self.f.shape[0]
        if self.f.shape != (n, n):
            raise DimensionMismatch("F must be square")
        if self.h.ndim != 2 or self.h.shape[1] != n:
            raise DimensionMismatch("H columns must match the state size")
        p = self.h.shape[0]
        if self.q.shape != (n, n) or self.r.shape != (p, p):
            raise DimensionMismatch("Q or R has inconsistent dimensions")
        if self.b is not None and self.b.shape[0] != n:
            raise DimensionMismatch("B rows must match the state size")


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def predict(s: KfState, m: KfModel, u: np.ndarray | None = None) -> KfState:
    """Time update: x = F x + B u, P = F P F^T + Q (symmetrized)."""
    x = m.f @ s.x
    if u is not None:
        if m.b is None:
            raise DimensionMismatch("control supplied but the model has no B")
        if np.asarray(u).shape != (m.b.shape[1],):
            raise DimensionMismatch("control vector does not match B")
        x = x + m.b @ np.asarray(u, dtype=float)
    p = _sym(m.f @ s.p @ m.f.T + m.q)
    return KfState(x, p)


def update(s: KfState, m: KfModel, z: np.ndarray, joseph: bool = False) -> KfState:
    """Measurement update with the innovation-form Kalman gain.

    Raises SingularInnovation when H P H^T + R is numerically singular:
    condition number above 1e12 after symmetric diagonal equilibration,
    which keeps the test meaningful when measurement rows carry different
    units. The Joseph-form covariance update is available behind the flag;
    the default is (I - K H) P, symmetrized.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (m.h.shape[0],):
        raise DimensionMismatch(f"measurement {z.shape} vs H {m.h.shape}")
    innov_cov = m.h @ s.p @ m.h.T + m.r
    diag = np.diag(innov_cov)
    if np.any(diag <= 0.0):
        raise SingularInnovation("innovation covariance has a non-positive diagonal")
    scale = 1.0 / np.sqrt(diag)
    if np.linalg.cond(innov_cov * np.outer(scale, scale)) > 1e12:
        raise SingularInnovation("innovation covariance is numerically singular")
    gain = np.linalg.solve(innov_cov.T, (s.p @ m.h.T).T).T
    x = s.x + gain @ (z - m.h @ s.x)
    i_kh = np.eye(s.x.size) - gain @ m.h
    if joseph:
        p = i_kh @ s.p @ i_kh.T + gain @ m.r @ gain.T
    else:
        p = i_kh @ s.p
    return KfState(x, _sym(p))


def feedback_correct(nav: NavState, x: np.ndarray) -> NavState:
    """Remove the estimated navigation errors from the INS solution.

    With the error convention C_computed = (I - [phi x]) C_true, the
    attitude correction is C <- (I + [phi x]) C, re-orthonormalized;
    velocity and position subtract their error estimates. Raises
    LargeMisalignment when |phi| >= 0.1 rad (small-angle validity).
    """
    x = np.asarray(x, dtype=float)
    phi_ned = np.array([x[PHI_N], x[PHI_E], x[PHI_D]])
    if np.max(np.abs(phi_ned)) >= 0.1:
        raise LargeMisalignment(f"misalignment estimate too large: {phi_ned}")
    c = orthonormalize((np.eye(3) + skew(phi_ned)) @ nav.attitude.m)
    v = nav.velocity.as_array() - np.array([x[DV_N], x[DV_E], x[DV_D]])
    pos = GeodeticPosition(nav.position.lat - x[DLAT],
                           wrap_pi(nav.position.lon - x[DLON]),
                           nav.position.h - x[DH])
    return NavState(Dcm(c), NedVector.from_array(v), pos)


@dataclass(frozen=True)
class GpsInsConfig:
    """Tuning for the 15-state loosely coupled filter.

    GPS noise in meters is converted to angular measurement noise at the
    current latitude on every update. Pseudo fixes produced during outages
    use R inflated by pseudo_r_inflation and drop the height row.

    The gyro-bias prior stays small by default: heading is weakly
    observable under position-only aiding, and a large prior lets the yaw
    variance grow until feedback corrections violate the small-angle gate.
    Raise it only for missions with strong heading observability.
    """

    imu_noise: ImuNoiseSpec = ImuNoiseSpec()
    sigma_gps_ne: float = 2.5
    sigma_gps_h: float = 5.0
    p0_attitude: float = 1.0 * DEG
    p0_velocity: float = 0.1
    p0_position_m: float = 5.0
    p0_accel_bias: float = 0.3
    p0_gyro_bias: float = 2e-4
    pseudo_r_inflation: float = 4.0
    joseph: bool = False
    params: Wgs84Params = WGS84


class GpsInsFilter:
    """Error-state filter fusing INS mechanization with GPS position fixes.

    The measurement is the geodetic position difference INS minus GPS
    (dLat, dLon, dH). Closed-loop feedback runs after every update; the
    accumulated accelerometer/gyro bias estimates are applied to each IMU
    sample before mechanization and linearization.
    """

    def __init__(self, cfg: GpsInsConfig, position: GeodeticPosition):
        self.cfg = cfg
        r_m, r_n = curvature_radii(position.lat, cfg.params)
        sig = np.zeros(STATE_DIM)
        sig[PHI_E:PHI_D + 1] = cfg.p0_attitude
        sig[DV_E:DV_D + 1] = cfg.p0_velocity
        sig[DLAT] = cfg.p0_position_m / (r_m + position.h)
        sig[DLON] = cfg.p0_position_m / ((r_n + position.h) * math.cos(position.lat))
        sig[DH] = cfg.p0_position_m
        sig[BA_X:BA_X + 3] = cfg.p0_accel_bias
        sig[BG_X:BG_X + 3] = cfg.p0_gyro_bias
        self.kf = KfState(np.zeros(STATE_DIM), np.diag(sig ** 2))
        self.accel_bias = np.zeros(3)
        self.gyro_bias = np.zeros(3)
        nrw = cfg.imu_noise
        self._bias_rw = np.zeros(STATE_DIM)
        self._bias_rw[BA_X:BA_X + 3] = nrw.accel_bias_rw ** 2
        self._bias_rw[BG_X:BG_X + 3] = nrw.gyro_bias_rw ** 2

    def compensate(self, imu: ImuSample) -> ImuSample:
        """Apply the accumulated bias estimates to a raw IMU sample."""
        return ImuSample(imu.t, imu.gyro - self.gyro_bias,
                         imu.accel - self.accel_bias, imu.attitude)

    def propagate(self, nav: NavState, imu: ImuSample, dt: float) -> NavState:
        """Mechanize one IMU interval and time-update the error covariance."""
        imu_c = self.compensate(imu)
        model = build_error_model(nav, imu_c, self.cfg.imu_noise, self.cfg.params)
        phi, qd = discretize(model, dt)
        qd = qd + np.diag(self._bias_rw * dt)
        x = phi @ self.kf.x
        p = _sym(phi @ self.kf.p @ phi.T + qd)
        self.kf = KfState(x, p)
        return mechanize_step(nav, imu_c, dt, self.cfg.params)

    def _measurement_model(self, nav: NavState, pseudo: bool) -> KfModel:
        r_m, r_n = curvature_radii(nav.position.lat, self.cfg.params)
        sig_lat = self.cfg.sigma_gps_ne / (r_m + nav.position.h)
        sig_lon = self.cfg.sigma_gps_ne / ((r_n + nav.position.h)
                                           * math.cos(nav.position.lat))
        rows = [DLAT, DLON] if pseudo else [DLAT, DLON, DH]
        sigmas = [sig_lat, sig_lon] if pseudo else [sig_lat, sig_lon,
                                                    self.cfg.sigma_gps_h]
        h = np.zeros((len(rows), STATE_DIM))
        for i, row in enumerate(rows):
            h[i, row] = 1.0
        r = np.diag(np.asarray(sigmas) ** 2)
        if pseudo:
            r = r * self.cfg.pseudo_r_inflation
        return KfModel(f=np.eye(STATE_DIM), h=h, q=np.zeros((STATE_DIM, STATE_DIM)), r=r)

    def correct(self, nav: NavState, gps: GpsFix, pseudo: bool = False) -> NavState:
        """Measurement-update with a (pseudo-)GPS fix, then feed back."""
        model = self._measurement_model(nav, pseudo)
        z = [nav.position.lat - gps.position.lat,
             wrap_pi(nav.position.lon - gps.position.lon)]
        if not pseudo:
            z.append(nav.position.h - gps.position.h)
        self.kf = update(self.kf, model, np.asarray(z), joseph=self.cfg.joseph)
        x = self.kf.x
        nav = feedback_correct(nav, x)
        self.accel_bias = self.accel_bias + x[BA_X:BA_X + 3]
        self.gyro_bias = self.gyro_bias + x[BG_X:BG_X + 3]
        self.kf = KfState(np.zeros(STATE_DIM), self.kf.p)
        return nav


def gps_ins_step(f: GpsInsFilter, nav: NavState, imu: ImuSample,
                 gps: GpsFix | None, dt: float,
                 pseudo: bool = False) -> tuple[GpsInsFilter, NavState]:
    """One fused step: propagate over the IMU interval, then update if a
    fix is present. With no fix the error estimate is simply held."""
    nav = f.propagate(nav, imu, dt)
    if gps is not None:
        if abs(gps.t - imu.t) > dt / 2.0:
            raise StaleGps(f"GPS at t={gps.t} does not match IMU t={imu.t}")
        nav = f.correct(nav, gps, pseudo=pseudo)
    return f, nav
