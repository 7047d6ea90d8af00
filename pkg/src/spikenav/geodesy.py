"""WGS-84 geodesy, attitude algebra and local-level frame helpers.

Conventions: the navigation frame is NED (north, east, down), angles are in
radians, yaw is measured clockwise from north, and the direction cosine
matrix C_b^n rotates body-frame vectors into the navigation frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class GimbalLock(ValueError):
    """Pitch too close to +-90 deg for a unique Euler decomposition."""


class OutOfLocalRange(ValueError):
    """Position too far from the reference for the local tangent plane."""


def wrap_pi(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(angle, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class Wgs84Params:
    """Reference ellipsoid constants.

    a: semi-major axis [m]; e2: first eccentricity squared; omega_e: earth
    rotation rate [rad/s]; g0: normal gravity at the equator [m/s^2].
    """

    a: float = 6378137.0
    e2: float = 6.69437999014e-3
    omega_e: float = 7.292115e-5
    g0: float = 9.7803253359

    def __post_init__(self):
        if not (self.a > 0 and 0 < self.e2 < 1 and self.omega_e > 0):
            raise ValueError(f"invalid ellipsoid parameters: {self}")


WGS84 = Wgs84Params()

# Somigliana gravity-formula constant and the dimensionless terms of the
# first-order free-air correction (flattening f and m = w^2 a^2 b / GM).
SOMIGLIANA_K = 1.931852652458e-3
FLATTENING = 1.0 / 298.257223563
GRAVITY_M = 3.449786506841e-3


@dataclass(frozen=True)
class GeodeticPosition:
    """Latitude [rad], longitude [rad] and height above the ellipsoid [m]."""

    lat: float
    lon: float
    h: float

    def __post_init__(self):
        if not math.isfinite(self.lat) or abs(self.lat) > math.pi / 2:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not math.isfinite(self.lon):
            raise ValueError(f"longitude not finite: {self.lon}")
        if not math.isfinite(self.h):
            raise ValueError(f"height not finite: {self.h}")
        object.__setattr__(self, "lon", wrap_pi(self.lon))


@dataclass(frozen=True)
class EulerAngles:
    """Roll, pitch, yaw [rad]; yaw-pitch-roll (z-y-x) rotation sequence."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.roll, self.pitch, self.yaw))):
            raise ValueError("non-finite Euler angle")
        if abs(self.pitch) >= math.pi / 2:
            raise GimbalLock(f"pitch {self.pitch} at or beyond +-90 deg")
        object.__setattr__(self, "roll", wrap_pi(self.roll))
        object.__setattr__(self, "yaw", wrap_pi(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class NedVector:
    """A vector resolved in the local NED frame (unit depends on use)."""

    north: float
    east: float
    down: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.north, self.east, self.down))):
            raise ValueError("non-finite NED component")

    def as_array(self) -> np.ndarray:
        return np.array([self.north, self.east, self.down])

    @staticmethod
    def from_array(v) -> "NedVector":
        v = np.asarray(v, dtype=float)
        return NedVector(float(v[0]), float(v[1]), float(v[2]))


ZERO_NED = NedVector(0.0, 0.0, 0.0)

_DCM_TOL = 1e-10
_EYE3 = np.eye(3)


@dataclass(frozen=True)
class Dcm:
    """Orthonormal direction cosine matrix (body to NED, det = +1)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"DCM must be 3x3, got {m.shape}")
        if np.max(np.abs(m @ m.T - _EYE3)) > _DCM_TOL:
            raise ValueError("matrix is not orthonormal within 1e-10")
        det = (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
               - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
               + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
        if abs(det - 1.0) > _DCM_TOL:
            raise ValueError("matrix determinant is not +1 within 1e-10")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate a body-frame vector into the navigation frame."""
        return self.m @ np.asarray(v, dtype=float)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """Rotate a navigation-frame vector into the body frame."""
        return self.m.T @ np.asarray(v, dtype=float)


def skew(v) -> np.ndarray:
    """Cross-product (skew-symmetric) matrix of a 3-vector."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    """Extract the 3-vector from the skew part of a matrix."""
    m = np.asarray(m, dtype=float)
    a = 0.5 * (m - m.T)
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense.

    Near-orthonormal inputs take a single Newton step of the symmetric
    orthogonalization iteration; anything farther falls back to the SVD
    polar factor.
    """
    m = np.asarray(m, dtype=float)
    gram = m.T @ m
    if np.max(np.abs(gram - np.eye(3))) < 1e-8:
        return 1.5 * m - 0.5 * (m @ gram)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def euler_to_dcm(angles: EulerAngles) -> Dcm:
    """Body-to-NED direction cosine matrix from roll/pitch/yaw."""
    sg, cg = math.sin(angles.roll), math.cos(angles.roll)
    st, ct = math.sin(angles.pitch), math.cos(angles.pitch)
    sp, cp = math.sin(angles.yaw), math.cos(angles.yaw)
    return Dcm(np.array([
        [ct * cp, -cg * sp + sg * st * cp, sg * sp + cg * st * cp],
        [ct * sp, cg * cp + sg * st * sp, -sg * cp + cg * st * sp],
        [-st, sg * ct, cg * ct],
    ]))


def dcm_to_euler(c: Dcm) -> EulerAngles:
    """Inverse of euler_to_dcm; raises GimbalLock near pitch = +-90 deg."""
    m = c.m
    if abs(m[2, 0]) >= 1.0 - 1e-9:
        raise GimbalLock("pitch within 1e-9 of +-90 deg; Euler angles undefined")
    pitch = math.asin(-m[2, 0])
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return EulerAngles(roll, pitch, yaw)


def curvature_radii(lat: float, params: Wgs84Params = WGS84) -> tuple[float, float]:
    """Meridian (R_M) and prime-vertical (R_N) radii of curvature [m]."""
    if abs(lat) > math.pi / 2:
        raise ValueError(f"latitude out of range: {lat}")
    s2 = math.sin(lat) ** 2
    den = 1.0 - params.e2 * s2
    r_m = params.a * (1.0 - params.e2) / den ** 1.5
    r_n = params.a / math.sqrt(den)
    return r_m, r_n


def earth_rate_n(lat: float, params: Wgs84Params = WGS84) -> NedVector:
    """Earth rotation rate resolved in NED [rad/s]."""
    return NedVector(params.omega_e * math.cos(lat), 0.0,
                     -params.omega_e * math.sin(lat))


def transport_rate_n(v: NedVector, pos: GeodeticPosition,
                     params: Wgs84Params = WGS84) -> NedVector:
    """Rotation rate of the NED frame relative to earth due to travel [rad/s]."""
    r_m, r_n = curvature_radii(pos.lat, params)
    return NedVector(
        v.east / (r_n + pos.h),
        -v.north / (r_m + pos.h),
        -v.east * math.tan(pos.lat) / (r_n + pos.h),
    )


def gravity_magnitude(lat: float, h: float, params: Wgs84Params = WGS84) -> float:
    """Somigliana normal gravity with a first-order free-air correction."""
    s2 = math.sin(lat) ** 2
    g_surface = params.g0 * (1.0 + SOMIGLIANA_K * s2) / math.sqrt(1.0 - params.e2 * s2)
    free_air = 1.0 - (2.0 / params.a) * (1.0 + FLATTENING + GRAVITY_M
                                         - 2.0 * FLATTENING * s2) * h
    return g_surface * free_air


def gravity_n(pos: GeodeticPosition, params: Wgs84Params = WGS84) -> NedVector:
    """Gravity vector in NED (positive down) [m/s^2]."""
    return NedVector(0.0, 0.0, gravity_magnitude(pos.lat, pos.h, params))


_LOCAL_RANGE_RAD = 0.01


def geodetic_to_local_ne(ref: GeodeticPosition, pos: GeodeticPosition,
                         params: Wgs84Params = WGS84) -> tuple[float, float]:
    """Metric north/east offsets of pos from ref on the local tangent plane.

    Radii are evaluated at ref; valid for offsets within 0.01 rad of arc.
    """
    dlat = pos.lat - ref.lat
    dlon = wrap_pi(pos.lon - ref.lon)
    if abs(dlat) >= _LOCAL_RANGE_RAD or abs(dlon) >= _LOCAL_RANGE_RAD:
        raise OutOfLocalRange(
            f"offset ({dlat:.4g}, {dlon:.4g}) rad exceeds local tangent validity")
    r_m, r_n = curvature_radii(ref.lat, params)
    north = dlat * (r_m + ref.h)
    east = dlon * (r_n + ref.h) * math.cos(ref.lat)
    return north, east


def local_ne_to_geodetic(ref: GeodeticPosition, north: float, east: float,
                         h: float | None = None,
                         params: Wgs84Params = WGS84) -> GeodeticPosition:
    """Exact inverse of geodetic_to_local_ne for the same reference point."""
    r_m, r_n = curvature_radii(ref.lat, params)
    dlat = north / (r_m + ref.h)
    dlon = east / ((r_n + ref.h) * math.cos(ref.lat))
    if abs(dlat) >= _LOCAL_RANGE_RAD or abs(dlon) >= _LOCAL_RANGE_RAD:
        raise OutOfLocalRange(
            f"offset ({north:.4g}, {east:.4g}) m exceeds local tangent validity")
    return GeodeticPosition(ref.lat + dlat, ref.lon + dlon,
                            ref.h if h is None else h)
