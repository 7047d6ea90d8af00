import math

import numpy as np
import pytest

from spikenav.datasets import SensorErrorSpec, TrajectoryProfile, generate_synthetic
from spikenav.geodesy import (
    EulerAngles,
    GeodeticPosition,
    NedVector,
    earth_rate_n,
    euler_to_dcm,
    geodetic_to_local_ne,
    gravity_n,
)
from spikenav.insmech import (
    BA_X,
    BG_X,
    DH,
    DLAT,
    DLON,
    DV_D,
    DV_E,
    DV_N,
    ImuNoiseSpec,
    ImuSample,
    NavState,
    NumericalDivergence,
    apply_nav_error,
    build_error_model,
    cayley,
    discretize,
    mechanize_step,
    nav_error_15,
)

POS = GeodeticPosition(0.7, 0.2, 100.0)


def _nav(roll=0.0, pitch=0.0, yaw=0.0, v=(0.0, 0.0, 0.0), pos=POS):
    return NavState(euler_to_dcm(EulerAngles(roll, pitch, yaw)),
                    NedVector(*v), pos)


def _imu(gyro, accel, t=0.0):
    return ImuSample(t, np.asarray(gyro, dtype=float),
                     np.asarray(accel, dtype=float), EulerAngles(0, 0, 0))


def test_cayley_is_orthogonal_and_matches_rodrigues():
    from spikenav.geodesy import skew

    s = np.array([1e-3, -2e-3, 5e-4])
    r = cayley(s)
    assert np.max(np.abs(r @ r.T - np.eye(3))) < 1e-15
    angle = np.linalg.norm(s)
    axis = skew(s / angle)
    rodrigues = (np.eye(3) + math.sin(angle) * axis
                 + (1 - math.cos(angle)) * axis @ axis)
    assert np.max(np.abs(r - rodrigues)) < 1e-9


def test_imusample_rejects_implausible_rates():
    with pytest.raises(ValueError):
        _imu([40.0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        _imu([0, 0, 0], [200.0, 0, 0])


def test_mechanize_stationary_force_balance():
    nav = _nav(roll=0.05, pitch=-0.03, yaw=1.2)
    g_n = gravity_n(POS).as_array()
    w_ie = earth_rate_n(POS.lat).as_array()
    f_b = nav.attitude.m.T @ (-g_n)
    gyro = nav.attitude.m.T @ w_ie
    out = nav
    for _ in range(50):
        out = mechanize_step(out, _imu(gyro, f_b), 0.01)
    assert np.max(np.abs(out.velocity.as_array())) < 1e-9


def test_mechanize_freeze_without_inputs():
    nav = _nav(yaw=0.3, v=(1.0, 2.0, 0.0))
    out = mechanize_step(nav, _imu([0, 0, 0], [0, 0, 0]), 0.01,
                         earth_rotation=False, gravity=False)
    assert np.allclose(out.attitude.m, nav.attitude.m, atol=1e-15)
    assert np.allclose(out.velocity.as_array(), nav.velocity.as_array())


def test_mechanize_circle_round_trip():
    profile = TrajectoryProfile(kind="circle", speed=10.0, radius=100.0)
    d = generate_synthetic(profile, SensorErrorSpec(), duration=100.0)
    nav = d.truth[0]
    for k in range(1, len(d.imu)):
        nav = mechanize_step(nav, d.imu[k], d.imu[k].t - d.imu[k - 1].t)
    n, e = geodetic_to_local_ne(d.truth[-1].position, nav.position)
    assert math.hypot(n, e) < 0.5


def test_mechanize_rejects_bad_dt():
    with pytest.raises(ValueError):
        mechanize_step(_nav(), _imu([0, 0, 0], [0, 0, 0]), 0.5)


def test_mechanize_divergence_detected():
    nav = NavState(_nav().attitude, NedVector(1e300, 0, 0), POS)
    with pytest.raises((NumericalDivergence, ValueError)):
        mechanize_step(nav, _imu([0, 0, 0], [0, 0, 0]), 0.01)


def test_error_model_velocity_coupling_to_misalignment():
    # level attitude, zero velocity: the velocity-error rows couple to phi
    # through the skew matrix of the specific force (0, 0, -g)
    nav = _nav()
    g = gravity_n(POS).down
    m = build_error_model(nav, _imu([0, 0, 0], [0.0, 0.0, -g]))
    # natural NED block of -phi x f_n is skew(f_n); check the east-first
    # entries: dV_E row couples to phi_N with -(-g) etc.
    f_vphi = m.f[DV_E:DV_D + 1, 0:3]
    # skew((0,0,-g)) in NED = [[0, g, 0], [-g, 0, 0], [0, 0, 0]]
    # east-first permutation swaps rows/cols 0 and 1
    expected = np.array([[0.0, -g, 0.0], [g, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert np.allclose(f_vphi, expected, atol=1e-12)


def test_error_model_position_rows_match_rate_jacobian():
    # symbolic differentiation of the geodetic rate equations with the
    # curvature radii held constant
    from spikenav.geodesy import curvature_radii

    nav = _nav(v=(12.0, -7.0, 1.5))
    m = build_error_model(nav, _imu([0.01, 0.02, -0.01], [0.1, 0.2, -9.8]))
    lat, h = POS.lat, POS.h
    r_m, r_n = curvature_radii(lat)
    v_n, v_e = 12.0, -7.0
    sec, tan = 1 / math.cos(lat), math.tan(lat)
    rows = m.f[DLAT:DH + 1]
    expected = np.zeros((3, 15))
    expected[0, DV_N] = 1.0 / (r_m + h)
    expected[0, DH] = -v_n / (r_m + h) ** 2
    expected[1, DV_E] = sec / (r_n + h)
    expected[1, DLAT] = v_e * tan * sec / (r_n + h)
    expected[1, DH] = -v_e * sec / (r_n + h) ** 2
    expected[2, DV_D] = -1.0
    assert np.allclose(rows, expected, atol=1e-15)


def test_error_model_bias_rows_zero_and_bias_columns():
    nav = _nav(roll=0.1, pitch=0.05, yaw=-0.7, v=(3.0, 4.0, 0.0))
    m = build_error_model(nav, _imu([0.01, -0.02, 0.03], [0.5, -0.2, -9.7]))
    assert np.all(m.f[BA_X:, :] == 0.0)
    c = nav.attitude.m
    # gyro bias enters the attitude rows via -C (rows east-first permuted)
    perm = [1, 0, 2]
    assert np.allclose(m.f[0:3, BG_X:BG_X + 3], -c[perm, :], atol=1e-15)
    # accel bias enters the velocity rows via +C
    assert np.allclose(m.f[DV_E:DV_D + 1, BA_X:BA_X + 3], c[perm, :], atol=1e-15)


def test_gyro_bias_does_not_reach_position_rows():
    nav = _nav(yaw=0.4, v=(5.0, 1.0, 0.0))
    m = build_error_model(nav, _imu([0.0, 0.0, 0.0], [0.0, 0.0, -9.8]))
    assert np.all(m.f[DLAT:DH + 1, BG_X:BG_X + 3] == 0.0)


def _fd_relative_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    pos = GeodeticPosition(0.7 + rng.normal() * 0.1, 0.2, 100.0)
    att = euler_to_dcm(EulerAngles(*rng.normal(scale=0.3, size=3)))
    nav = NavState(att, NedVector.from_array(rng.normal(scale=10, size=3)), pos)
    accel = rng.normal(scale=3, size=3) + att.m.T @ np.array([0, 0, -9.8])
    gyro = rng.normal(scale=0.1, size=3)
    imu = _imu(gyro, accel)
    m = build_error_model(nav, imu)
    dt = 0.01
    scale = np.ones(15)
    scale[0:3] = 1e-6
    scale[3:6] = 1e-6
    scale[6:8] = 1e-12
    scale[8] = 1e-6
    scale[9:12] = 1e-6
    scale[12:15] = 1e-8
    dx = rng.normal(size=15) * scale
    pert = apply_nav_error(nav, dx)
    imu_pert = _imu(gyro + dx[BG_X:BG_X + 3], accel + dx[BA_X:BA_X + 3])
    base_next = mechanize_step(nav, imu, dt)
    pert_next = mechanize_step(pert, imu_pert, dt)
    dx_next = nav_error_15(pert_next, base_next,
                           accel_bias=dx[BA_X:BA_X + 3],
                           gyro_bias=dx[BG_X:BG_X + 3])
    fd = (dx_next - dx) / dt
    lin = m.f @ dx
    return float(np.linalg.norm(lin - fd) / np.linalg.norm(fd))


def test_linearization_consistency_with_mechanization():
    rels = [_fd_relative_error(seed) for seed in range(25)]
    assert max(rels) < 0.05, f"worst relative error {max(rels):.4f}"


def test_discretize_identity_for_zero_dynamics():
    m = build_error_model(_nav(), _imu([0, 0, 0], [0, 0, 0]))
    zero = type(m)(f=np.zeros((15, 15)), g=m.g, qc=m.qc)
    phi, qd = discretize(zero, 0.01)
    assert np.allclose(phi, np.eye(15))
    assert np.all(qd == 0.0)


def test_discretize_small_dt_limit():
    m = build_error_model(_nav(v=(10, 5, 0)), _imu([0.01, 0, 0], [1, 0, -9.8]))
    norms = []
    for dt in (1e-2, 1e-3, 1e-4):
        phi, _ = discretize(m, dt)
        norms.append(np.linalg.norm(phi - np.eye(15)) / dt)
    assert abs(norms[0] - norms[2]) / norms[2] < 0.05


def test_discretize_matches_matrix_exponential_series():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(15, 15))
    a = 0.3 * a / np.linalg.norm(a, 2)
    f = a - 0.1 * np.eye(15)  # stable, modest norm
    base = build_error_model(_nav(), _imu([0, 0, 0], [0, 0, 0]))
    m = type(base)(f=f, g=base.g, qc=np.eye(6) * 1e-4)
    dt = 0.01
    phi, qd = discretize(m, dt)
    # 10-term series for expm(F dt)
    series = np.eye(15)
    term = np.eye(15)
    for k in range(1, 11):
        term = term @ (f * dt) / k
        series = series + term
    assert np.max(np.abs(phi - series)) < 1e-8
    assert np.min(np.linalg.eigvalsh(qd)) > -1e-12


def test_discretize_qd_symmetric_psd():
    nav = _nav(yaw=1.0, v=(8.0, -3.0, 0.5))
    m = build_error_model(nav, _imu([0.05, 0.01, -0.02], [1.0, 0.3, -9.6]),
                          noise=ImuNoiseSpec(gyro_noise=1e-3, accel_noise=1e-2))
    _, qd = discretize(m, 0.01)
    assert np.max(np.abs(qd - qd.T)) == 0.0
    assert np.min(np.linalg.eigvalsh(qd)) > -1e-12


def test_attitude_orthonormal_over_many_steps():
    profile = TrajectoryProfile(kind="figure-eight", speed=8.0, period=60.0)
    d = generate_synthetic(profile, SensorErrorSpec(
        gyro_bias=(1e-3, -2e-3, 5e-4), accel_bias=(0.05, -0.02, 0.01),
        gyro_noise_std=1e-4, accel_noise_std=1e-3, seed=1), duration=100.0)
    nav = d.truth[0]
    for k in range(1, len(d.imu)):
        nav = mechanize_step(nav, d.imu[k], d.imu[k].t - d.imu[k - 1].t)
        if k % 2500 == 0:
            c = nav.attitude.m
            assert np.max(np.abs(c @ c.T - np.eye(3))) < 1e-8
    c = nav.attitude.m
    assert np.max(np.abs(c @ c.T - np.eye(3))) < 1e-8
