"""Strapdown INS mechanization and the 15-state error dynamics model.

The error state is ordered (phi_E, phi_N, phi_D, dV_E, dV_N, dV_D, dLat,
dLon, dH, accel bias x/y/z, gyro bias x/y/z); misalignment and velocity
errors carry east-first component ordering while all physical vectors in
this module are NED. Error convention: dx = computed minus true, with the
computed attitude C_comp = (I - [phi x]) C_true.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodesy import (
    WGS84,
    Dcm,
    EulerAngles,
    GeodeticPosition,
    NedVector,
    Wgs84Params,
    curvature_radii,
    earth_rate_n,
    gravity_magnitude,
    orthonormalize,
    skew,
    transport_rate_n,
)

STATE_DIM = 15
NOISE_DIM = 6

# indices into the error state
PHI_E, PHI_N, PHI_D = 0, 1, 2
DV_E, DV_N, DV_D = 3, 4, 5
DLAT, DLON, DH = 6, 7, 8
BA_X, BA_Y, BA_Z = 9, 10, 11
BG_X, BG_Y, BG_Z = 12, 13, 14

# maps the natural NED ordering (phi_N, phi_E, phi_D, dV_N, dV_E, dV_D, ...)
# used to assemble the matrices onto the east-first state above
_PERM = np.array([1, 0, 2, 4, 3, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14])

MAX_GYRO = 35.0
MAX_ACCEL = 160.0


class NumericalDivergence(RuntimeError):
    """Mechanization produced a non-finite state component."""


@dataclass(frozen=True)
class ImuSample:
    """One IMU record: body rates, specific force and the logged attitude.

    The rates are the mean over the sampling interval ending at t.
    """

    t: float
    gyro: np.ndarray
    accel: np.ndarray
    attitude: EulerAngles

    def __post_init__(self):
        gyro = np.array(self.gyro, dtype=float)
        accel = np.array(self.accel, dtype=float)
        if gyro.shape != (3,) or accel.shape != (3,):
            raise ValueError("gyro and accel must be 3-vectors")
        g2 = float(gyro @ gyro)
        a2 = float(accel @ accel)
        if not (math.isfinite(self.t) and math.isfinite(g2) and math.isfinite(a2)):
            raise ValueError(f"non-finite IMU sample at t={self.t}")
        if g2 >= MAX_GYRO ** 2:
            raise ValueError(f"gyro magnitude implausible at t={self.t}")
        if a2 >= MAX_ACCEL ** 2:
            raise ValueError(f"accel magnitude implausible at t={self.t}")
        gyro.flags.writeable = False
        accel.flags.writeable = False
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "accel", accel)


@dataclass(frozen=True)
class NavState:
    """Full navigation solution: attitude, NED velocity, geodetic position."""

    attitude: Dcm
    velocity: NedVector
    position: GeodeticPosition


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous-time IMU noise densities driving the error model.

    gyro_noise [rad/s/sqrt(Hz)], accel_noise [m/s^2/sqrt(Hz)] feed the
    white-noise channels; the bias random-walk densities are added to the
    discrete process noise by the filter (the bias states themselves are
    modeled as random constants). Defaults are consumer grade: angle random
    walk 0.3 deg/sqrt(h) and velocity random walk 0.1 m/s/sqrt(h).
    """

    gyro_noise: float = 8.73e-5
    accel_noise: float = 1.67e-3
    gyro_bias_rw: float = 5e-6
    accel_bias_rw: float = 3e-4

    def __post_init__(self):
        if min(self.gyro_noise, self.accel_noise,
               self.gyro_bias_rw, self.accel_bias_rw) < 0:
            raise ValueError("noise densities must be non-negative")

    def qc(self) -> np.ndarray:
        """White-noise PSD matrix (gyro channels first, then accel)."""
        return np.diag([self.gyro_noise ** 2] * 3 + [self.accel_noise ** 2] * 3)


@dataclass(frozen=True)
class ErrorModelMatrices:
    """Continuous-time error dynamics F (15x15), noise map G (15x6) and the
    white-noise PSD Qc (6x6), all in the east-first state ordering."""

    f: np.ndarray
    g: np.ndarray
    qc: np.ndarray

    def __post_init__(self):
        if self.f.shape != (STATE_DIM, STATE_DIM) or self.g.shape != (STATE_DIM, NOISE_DIM):
            raise ValueError("bad error-model matrix shapes")
        if self.qc.shape != (NOISE_DIM, NOISE_DIM):
            raise ValueError("Qc must be 6x6")


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def cayley(sigma) -> np.ndarray:
    """Rotation matrix for a small rotation vector via the Cayley transform.

    Exactly orthogonal for any input; matches the true rotation to O(|s|^3).
    """
    s = np.asarray(sigma, dtype=float)
    sk = skew(s)
    return np.eye(3) + (sk + 0.5 * (sk @ sk)) / (1.0 + 0.25 * float(s @ s))


def mechanize_step(state: NavState, imu: ImuSample, dt: float,
                   params: Wgs84Params = WGS84,
                   earth_rotation: bool = True,
                   gravity: bool = True) -> NavState:
    """Propagate the navigation state over one IMU interval.

    Attitude advances by the body rotation corrected for the rotation of the
    NED frame; velocity integrates specific force plus gravity minus the
    Coriolis/transport acceleration; position integrates the geodetic rate
    equations with the interval-average velocity. The earth_rotation and
    gravity switches exist for isolated integration tests.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt out of range: {dt}")
    c = state.attitude.m
    v = state.velocity.as_array()
    pos = state.position
    r_m, r_n = curvature_radii(pos.lat, params)

    if earth_rotation:
        w_ie = earth_rate_n(pos.lat, params).as_array()
        w_en = transport_rate_n(state.velocity, pos, params).as_array()
    else:
        w_ie = np.zeros(3)
        w_en = np.zeros(3)
    w_in = w_ie + w_en

    with np.errstate(over="ignore", invalid="ignore"):
        c_new = cayley(-w_in * dt) @ c @ cayley(imu.gyro * dt)
        if not np.all(np.isfinite(c_new)):
            raise NumericalDivergence(f"non-finite attitude at t={imu.t}")
        c_new = orthonormalize(c_new)

        f_n = 0.5 * (c + c_new) @ imu.accel
        accel_n = f_n - _cross3(2.0 * w_ie + w_en, v)
        if gravity:
            accel_n = accel_n + np.array(
                [0.0, 0.0, gravity_magnitude(pos.lat, pos.h, params)])
        v_new = v + accel_n * dt
        v_avg = 0.5 * (v + v_new)

        lat_new = pos.lat + v_avg[0] / (r_m + pos.h) * dt
        lon_new = pos.lon + v_avg[1] / ((r_n + pos.h) * math.cos(pos.lat)) * dt
        h_new = pos.h - v_avg[2] * dt

    if not (np.all(np.isfinite(v_new)) and math.isfinite(lat_new)
            and math.isfinite(lon_new) and math.isfinite(h_new)):
        raise NumericalDivergence(f"non-finite navigation state at t={imu.t}")

    return NavState(Dcm(c_new), NedVector.from_array(v_new),
                    GeodeticPosition(lat_new, lon_new, h_new))


def build_error_model(state: NavState, imu: ImuSample,
                      noise: ImuNoiseSpec | None = None,
                      params: Wgs84Params = WGS84) -> ErrorModelMatrices:
    """Continuous-time 15-state error dynamics linearized at the state.

    Attitude error: phi_dot = phi x w_in + d(w_in) - C eps_b.
    Velocity error: dV_dot = -phi x f_n + dV x (2 w_ie + w_en)
                             + V x (2 dw_ie + dw_en) + C grad_b.
    Position error rows are the Jacobian of the geodetic rate equations
    (curvature radii held constant). Bias rows are zero (random constants).
    """
    c = state.attitude.m
    v = state.velocity.as_array()
    pos = state.position
    lat, h = pos.lat, pos.h
    r_m, r_n = curvature_radii(lat, params)
    t_l, sec_l = math.tan(lat), 1.0 / math.cos(lat)
    s_l, c_l = math.sin(lat), math.cos(lat)
    omega = params.omega_e

    w_ie = earth_rate_n(lat, params).as_array()
    w_en = transport_rate_n(state.velocity, pos, params).as_array()
    w_in = w_ie + w_en
    f_n = c @ imu.accel

    # d(w_en)/d(v) with v in NED order
    a_v = np.array([
        [0.0, 1.0 / (r_n + h), 0.0],
        [-1.0 / (r_m + h), 0.0, 0.0],
        [0.0, -t_l / (r_n + h), 0.0],
    ])
    # d(w_ie)/d(lat, lon, h) and d(w_en)/d(lat, lon, h)
    dw_ie_dp = np.zeros((3, 3))
    dw_ie_dp[:, 0] = [-omega * s_l, 0.0, -omega * c_l]
    dw_en_dp = np.zeros((3, 3))
    dw_en_dp[:, 0] = [0.0, 0.0, -v[1] * sec_l ** 2 / (r_n + h)]
    dw_en_dp[:, 2] = [-v[1] / (r_n + h) ** 2, v[0] / (r_m + h) ** 2,
                      v[1] * t_l / (r_n + h) ** 2]

    f_nat = np.zeros((STATE_DIM, STATE_DIM))
    vx = skew(v)

    # attitude error rows
    f_nat[0:3, 0:3] = -skew(w_in)
    f_nat[0:3, 3:6] = a_v
    f_nat[0:3, 6:9] = dw_ie_dp + dw_en_dp
    f_nat[0:3, 12:15] = -c

    # velocity error rows
    f_nat[3:6, 0:3] = skew(f_n)
    f_nat[3:6, 3:6] = -skew(2.0 * w_ie + w_en) + vx @ a_v
    f_nat[3:6, 6:9] = vx @ (2.0 * dw_ie_dp + dw_en_dp)
    f_nat[3:6, 9:12] = c

    # position error rows
    f_nat[6, 3] = 1.0 / (r_m + h)
    f_nat[6, 8] = -v[0] / (r_m + h) ** 2
    f_nat[7, 4] = sec_l / (r_n + h)
    f_nat[7, 6] = v[1] * t_l * sec_l / (r_n + h)
    f_nat[7, 8] = -v[1] * sec_l / (r_n + h) ** 2
    f_nat[8, 5] = -1.0

    g_nat = np.zeros((STATE_DIM, NOISE_DIM))
    g_nat[0:3, 0:3] = -c
    g_nat[3:6, 3:6] = c

    ix = np.ix_(_PERM, _PERM)
    qc = noise.qc() if noise is not None else np.zeros((NOISE_DIM, NOISE_DIM))
    return ErrorModelMatrices(f=f_nat[ix], g=g_nat[_PERM, :], qc=qc)


def discretize(m: ErrorModelMatrices, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order transition matrix and discrete process noise.

    Phi = I + F dt + F^2 dt^2 / 2; Qd = G Qc G^T dt, symmetrized.
    """
    if not 0.0 < dt <= 1.0:
        raise ValueError(f"dt out of range: {dt}")
    f = m.f
    phi = np.eye(STATE_DIM) + f * dt + (f @ f) * (dt * dt / 2.0)
    qd = m.g @ m.qc @ m.g.T * dt
    qd = 0.5 * (qd + qd.T)
    return phi, qd


def nav_error_15(computed: NavState, truth: NavState,
                 accel_bias=None, gyro_bias=None) -> np.ndarray:
    """Error state (computed minus true) in the east-first ordering.

    The misalignment is extracted from C_comp C_true^T = I - [phi x]; the
    bias slots carry the supplied values (zero when omitted).
    """
    from .geodesy import vee

    phi_ned = vee(np.eye(3) - computed.attitude.m @ truth.attitude.m.T)
    dv = computed.velocity.as_array() - truth.velocity.as_array()
    x = np.zeros(STATE_DIM)
    x[PHI_E], x[PHI_N], x[PHI_D] = phi_ned[1], phi_ned[0], phi_ned[2]
    x[DV_E], x[DV_N], x[DV_D] = dv[1], dv[0], dv[2]
    x[DLAT] = computed.position.lat - truth.position.lat
    x[DLON] = computed.position.lon - truth.position.lon
    x[DH] = computed.position.h - truth.position.h
    if accel_bias is not None:
        x[BA_X:BA_Z + 1] = accel_bias
    if gyro_bias is not None:
        x[BG_X:BG_Z + 1] = gyro_bias
    return x


def apply_nav_error(truth: NavState, x: np.ndarray) -> NavState:
    """Build the computed state whose error relative to truth is x."""
    phi_ned = np.array([x[PHI_N], x[PHI_E], x[PHI_D]])
    c = orthonormalize((np.eye(3) - skew(phi_ned)) @ truth.attitude.m)
    v = truth.velocity.as_array() + np.array([x[DV_N], x[DV_E], x[DV_D]])
    pos = GeodeticPosition(truth.position.lat + x[DLAT],
                           truth.position.lon + x[DLON],
                           truth.position.h + x[DH])
    return NavState(Dcm(c), NedVector.from_array(v), pos)
