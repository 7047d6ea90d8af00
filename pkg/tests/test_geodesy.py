import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikenav.geodesy import (
    WGS84,
    Dcm,
    EulerAngles,
    GeodeticPosition,
    GimbalLock,
    NedVector,
    OutOfLocalRange,
    curvature_radii,
    dcm_to_euler,
    earth_rate_n,
    euler_to_dcm,
    geodetic_to_local_ne,
    gravity_magnitude,
    gravity_n,
    local_ne_to_geodetic,
    orthonormalize,
    skew,
    transport_rate_n,
    vee,
    wrap_pi,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
pitches = st.floats(-1.4, 1.4, allow_nan=False)
latitudes = st.floats(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6, allow_nan=False)


def test_wrap_pi_range():
    for a in [0.0, math.pi, -math.pi, 3 * math.pi, -7.5, 123.456]:
        w = wrap_pi(a)
        assert -math.pi < w <= math.pi
        assert abs(math.sin(w) - math.sin(a)) < 1e-12
        assert abs(math.cos(w) - math.cos(a)) < 1e-12


def test_euler_to_dcm_identity():
    c = euler_to_dcm(EulerAngles(0.0, 0.0, 0.0))
    assert np.allclose(c.m, np.eye(3))


def test_euler_to_dcm_pure_yaw():
    c = euler_to_dcm(EulerAngles(0.0, 0.0, math.pi / 2))
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(c.m, expected, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angles, pitches, angles)
def test_dcm_orthonormal_for_random_angles(roll, pitch, yaw):
    c = euler_to_dcm(EulerAngles(roll, pitch, yaw))
    assert np.max(np.abs(c.m @ c.m.T - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(c.m) - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(angles, pitches, angles)
def test_euler_round_trip(roll, pitch, yaw):
    a = EulerAngles(roll, pitch, yaw)
    b = dcm_to_euler(euler_to_dcm(a))
    assert abs(wrap_pi(b.roll - a.roll)) < 1e-9
    assert abs(b.pitch - a.pitch) < 1e-9
    assert abs(wrap_pi(b.yaw - a.yaw)) < 1e-9


def test_round_trip_specific():
    a = EulerAngles(0.1, 0.2, 0.3)
    b = dcm_to_euler(euler_to_dcm(a))
    assert abs(b.roll - 0.1) < 1e-12
    assert abs(b.pitch - 0.2) < 1e-12
    assert abs(b.yaw - 0.3) < 1e-12


def test_dcm_to_euler_gimbal_lock():
    # pitch = +90 deg puts -sin(pitch) = -1 in the (2, 0) slot
    m = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    with pytest.raises(GimbalLock):
        dcm_to_euler(Dcm(m))


def test_dcm_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Dcm(np.eye(3) * 1.001)


def test_curvature_radii_at_equator():
    r_m, r_n = curvature_radii(0.0)
    assert r_n == pytest.approx(WGS84.a, abs=1e-9)
    assert r_m == pytest.approx(WGS84.a * (1 - WGS84.e2), abs=1e-9)


def test_curvature_radii_mid_latitude_oracle():
    # independent evaluation of the closed forms
    lat = math.pi / 4
    s2 = math.sin(lat) ** 2
    r_m_ref = WGS84.a * (1 - WGS84.e2) / (1 - WGS84.e2 * s2) ** 1.5
    r_n_ref = WGS84.a / (1 - WGS84.e2 * s2) ** 0.5
    r_m, r_n = curvature_radii(lat)
    assert abs(r_m - r_m_ref) < 1e-6
    assert abs(r_n - r_n_ref) < 1e-6
    assert r_n >= r_m > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, math.pi / 2 - 0.01), st.floats(1e-4, 0.01))
def test_curvature_radii_monotone_in_latitude(lat, step):
    r_m0, r_n0 = curvature_radii(lat)
    r_m1, r_n1 = curvature_radii(min(lat + step, math.pi / 2))
    assert r_m1 >= r_m0 - 1e-9
    assert r_n1 >= r_n0 - 1e-9


def test_earth_rate_pole_and_equator():
    pole = earth_rate_n(math.pi / 2)
    assert pole.north == pytest.approx(0.0, abs=1e-20)
    assert pole.down == pytest.approx(-WGS84.omega_e)
    eq = earth_rate_n(0.0)
    assert eq.north == pytest.approx(WGS84.omega_e)
    assert eq.down == pytest.approx(0.0, abs=1e-20)


@settings(max_examples=100, deadline=None)
@given(latitudes)
def test_earth_rate_zero_east(lat):
    assert earth_rate_n(lat).east == 0.0


def test_earth_rate_closed_form():
    lat = math.pi / 6
    v = earth_rate_n(lat)
    assert abs(v.north - WGS84.omega_e * math.cos(lat)) < 1e-15
    assert abs(v.down + WGS84.omega_e * math.sin(lat)) < 1e-15


def test_transport_rate_zero_velocity():
    pos = GeodeticPosition(0.5, 1.0, 100.0)
    w = transport_rate_n(NedVector(0.0, 0.0, 0.0), pos)
    assert w.as_array().tolist() == [0.0, 0.0, 0.0]


def test_transport_rate_north_only():
    pos = GeodeticPosition(0.0, 0.0, 0.0)
    r_m, _ = curvature_radii(0.0)
    w = transport_rate_n(NedVector(10.0, 0.0, 0.0), pos)
    assert w.north == 0.0
    assert w.east == pytest.approx(-10.0 / r_m, rel=1e-15)
    assert w.down == 0.0


def test_transport_rate_closed_form():
    pos = GeodeticPosition(math.pi / 4, 0.2, 250.0)
    v = NedVector(12.3, -4.5, 1.7)
    r_m, r_n = curvature_radii(pos.lat)
    w = transport_rate_n(v, pos)
    assert abs(w.north - v.east / (r_n + pos.h)) < 1e-15
    assert abs(w.east + v.north / (r_m + pos.h)) < 1e-15
    assert abs(w.down + v.east * math.tan(pos.lat) / (r_n + pos.h)) < 1e-15


def test_gravity_anchor_point():
    g = gravity_n(GeodeticPosition(0.0, 0.0, 0.0))
    assert g.north == 0.0 and g.east == 0.0
    assert g.down == pytest.approx(WGS84.g0)


def test_gravity_decreases_with_height():
    lat = 0.7
    assert gravity_magnitude(lat, 1000.0) < gravity_magnitude(lat, 0.0)


def test_gravity_oracle_mid_latitude():
    # independent re-evaluation of the chosen formula
    lat, h = math.pi / 4, 100.0
    s2 = math.sin(lat) ** 2
    g_s = 9.7803253359 * (1 + 1.931852652458e-3 * s2) / math.sqrt(1 - WGS84.e2 * s2)
    f, m = 1 / 298.257223563, 3.449786506841e-3
    g_ref = g_s * (1 - 2.0 / WGS84.a * (1 + f + m - 2 * f * s2) * h)
    assert abs(gravity_magnitude(lat, h) - g_ref) < 1e-9


@settings(max_examples=100, deadline=None)
@given(latitudes, st.floats(-5000, 10000))
def test_gravity_plausible_range(lat, h):
    g = gravity_magnitude(lat, h)
    assert 9.7 <= g <= 9.9


def test_local_ne_zero_offset():
    ref = GeodeticPosition(0.7, -1.2, 50.0)
    assert geodetic_to_local_ne(ref, ref) == (0.0, 0.0)


def test_local_ne_pure_latitude_step():
    ref = GeodeticPosition(0.0, 0.0, 0.0)
    pos = GeodeticPosition(1e-5, 0.0, 0.0)
    r_m, _ = curvature_radii(0.0)
    n, e = geodetic_to_local_ne(ref, pos)
    assert n == pytest.approx(1e-5 * r_m, rel=1e-12)
    assert e == 0.0


def test_local_ne_round_trip_1km():
    ref = GeodeticPosition(0.8, 2.1, 120.0)
    pos = local_ne_to_geodetic(ref, 800.0, -600.0)
    n, e = geodetic_to_local_ne(ref, pos)
    assert abs(n - 800.0) < 1e-3
    assert abs(e + 600.0) < 1e-3


def test_local_ne_out_of_range():
    ref = GeodeticPosition(0.0, 0.0, 0.0)
    with pytest.raises(OutOfLocalRange):
        geodetic_to_local_ne(ref, GeodeticPosition(0.02, 0.0, 0.0))


def test_geodetic_position_normalizes_longitude():
    p = GeodeticPosition(0.0, math.pi + 0.5, 0.0)
    assert -math.pi < p.lon <= math.pi
    assert p.lon == pytest.approx(-math.pi + 0.5)


def test_geodetic_position_rejects_bad_latitude():
    with pytest.raises(ValueError):
        GeodeticPosition(2.0, 0.0, 0.0)


def test_euler_angles_reject_gimbal_pitch():
    with pytest.raises(GimbalLock):
        EulerAngles(0.0, math.pi / 2, 0.0)


def test_skew_vee_round_trip():
    v = np.array([0.3, -1.2, 2.5])
    assert np.allclose(vee(skew(v)), v)
    assert np.allclose(skew(v) @ np.array([1.0, 0, 0]), np.cross(v, [1, 0, 0]))


def test_orthonormalize_restores_rotation():
    rng = np.random.default_rng(0)
    c = euler_to_dcm(EulerAngles(0.4, -0.2, 1.1)).m
    noisy = c + rng.normal(scale=1e-6, size=(3, 3))
    r = orthonormalize(noisy)
    assert np.max(np.abs(r @ r.T - np.eye(3))) < 1e-14
    assert np.max(np.abs(r - c)) < 1e-5
