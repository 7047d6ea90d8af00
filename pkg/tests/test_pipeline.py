import json
import math

import numpy as np
import pytest

from spikenav.datasets import (
    GpsNoiseSpec,
    OutageSchedule,
    SensorErrorSpec,
    TrajectoryProfile,
    generate_synthetic,
    inject_outages,
)
from spikenav.geodesy import GeodeticPosition, geodetic_to_local_ne
from spikenav.insmech import ImuNoiseSpec
from spikenav.kalman import GpsInsConfig
from spikenav.pipeline import (
    AlignmentError,
    MethodTrajectory,
    Mode,
    ModelWindowUnavailable,
    ModeState,
    TrueIncrementPredictor,
    ZeroPredictor,
    accumulate_pseudo_gps,
    emit_report,
    evaluate,
    load_trajectory_csv,
    run_fusion,
    run_hybrid,
    run_pure_ins,
    truth_trajectory,
)

ANCHOR = GeodeticPosition(0.7, 0.2, 100.0)

QUIET_ERRORS = SensorErrorSpec(gyro_noise_std=1e-4, accel_noise_std=1e-3, seed=3)
CFG = GpsInsConfig(imu_noise=ImuNoiseSpec(gyro_noise=1e-4, accel_noise=1e-3),
                   sigma_gps_ne=1.5, sigma_gps_h=3.0)


def _scenario(duration=120.0, outages=((60.0, 90.0),), seed=3,
              errors=None, gps_noise=GpsNoiseSpec(std_ne=1.5, std_h=3.0),
              profile=None):
    profile = profile or TrajectoryProfile(kind="figure-eight", speed=2.0,
                                           period=60.0)
    errors = errors or QUIET_ERRORS
    d_clean = generate_synthetic(profile, errors, duration=duration,
                                 gps_noise=gps_noise)
    sched = OutageSchedule(tuple(outages))
    return inject_outages(d_clean, sched) if outages else d_clean, sched, d_clean


def test_mode_state_invariant():
    ModeState(Mode.ONLINE_TRAINING)
    ModeState(Mode.PREDICTION, anchor=ANCHOR)
    with pytest.raises(ValueError):
        ModeState(Mode.PREDICTION)
    with pytest.raises(ValueError):
        ModeState(Mode.ONLINE_TRAINING, anchor=ANCHOR)


def test_accumulate_empty_is_anchor():
    assert accumulate_pseudo_gps(ANCHOR, []) == ANCHOR


def test_accumulate_telescoping_sum():
    out = accumulate_pseudo_gps(ANCHOR, [(1.0, 2.0), (3.0, 4.0)])
    n, e = geodetic_to_local_ne(ANCHOR, out)
    assert n == pytest.approx(4.0, abs=1e-6)
    assert e == pytest.approx(6.0, abs=1e-6)


def test_accumulate_true_increments_telescope():
    """Feeding true epoch increments reproduces the true positions."""
    d, _, _ = _scenario(duration=40.0, outages=(),
                        profile=TrajectoryProfile(kind="figure-eight",
                                                  speed=8.0, period=40.0),
                        gps_noise=GpsNoiseSpec())
    fixes = d.gps[:31]  # 30 seconds of epochs
    increments = [geodetic_to_local_ne(a.position, b.position)
                  for a, b in zip(fixes[:-1], fixes[1:])]
    pos = accumulate_pseudo_gps(fixes[0].position, increments)
    n, e = geodetic_to_local_ne(fixes[-1].position, pos)
    assert math.hypot(n, e) < 1e-3
    # incremental folding matches the one-shot fold
    running = fixes[0].position
    for inc in increments:
        running = accumulate_pseudo_gps(running, [inc])
    assert running == pos


def test_hybrid_without_outages_matches_plain_fusion():
    d, _, _ = _scenario(duration=60.0, outages=())
    a = run_hybrid(d, ZeroPredictor(), CFG, window_n=50)
    b = run_fusion(d, CFG, name="plain")
    assert a.prediction_entries == 0
    assert np.array_equal(a.lat, b.lat)
    assert np.array_equal(a.lon, b.lon)
    assert np.array_equal(a.h, b.h)


def test_prediction_entries_match_schedule():
    d, sched, _ = _scenario(duration=180.0,
                            outages=((60.0, 90.0), (120.0, 150.0)))
    traj = run_hybrid(d, ZeroPredictor(), CFG, window_n=50)
    assert traj.prediction_entries == len(sched.intervals)
    ins = run_pure_ins(d, CFG)
    assert ins.prediction_entries == len(sched.intervals)


def test_zero_model_pinned_at_anchor():
    d, sched, _ = _scenario(duration=120.0, outages=((60.0, 90.0),))
    traj = run_hybrid(d, ZeroPredictor(), CFG, window_n=50)
    truth = truth_trajectory(d)
    rep = evaluate({"zero": traj}, truth, sched)
    start = sched.intervals[0][0]
    anchor_idx = int(np.searchsorted(traj.t, start - 1e-6)) - 1
    anchor = GeodeticPosition(traj.lat[anchor_idx], traj.lon[anchor_idx],
                              traj.h[anchor_idx])
    # solution stays near the anchor while the vehicle moves away
    sel = (traj.t >= start) & (traj.t < sched.intervals[0][1])
    for i in np.nonzero(sel)[0][5:]:
        pos = GeodeticPosition(traj.lat[i], traj.lon[i], traj.h[i])
        n, e = geodetic_to_local_ne(anchor, pos)
        assert math.hypot(n, e) < 10.0
    # and the error grows with true displacement from the anchor
    m = rep.metrics["zero"][0]
    truth_idx = np.searchsorted(truth.t, traj.t[sel])
    disp = [math.hypot(*geodetic_to_local_ne(
        anchor, GeodeticPosition(truth.lat[i], truth.lon[i], truth.h[i])))
        for i in truth_idx]
    assert m.max_horizontal > 0.5 * max(disp)


def test_oracle_model_keeps_error_near_gps_available_level():
    d, sched, d_clean = _scenario(duration=150.0, outages=((60.0, 90.0),))
    truth = truth_trajectory(d)
    oracle = run_hybrid(d, TrueIncrementPredictor(d), CFG, window_n=50)
    fused = run_fusion(d_clean, CFG, name="fused")
    rep = evaluate({"oracle": oracle, "fused": fused}, truth, sched)
    outage_err = max(m.max_horizontal for m in rep.metrics["oracle"])
    avail_err = rep.gps_available_max_horizontal["fused"]
    assert outage_err <= 2.0 * avail_err, (outage_err, avail_err)


def test_pure_ins_zero_error_imu_drift_free():
    d, sched, _ = _scenario(duration=90.0, outages=((40.0, 70.0),),
                            errors=SensorErrorSpec(seed=1),
                            gps_noise=GpsNoiseSpec())
    traj = run_pure_ins(d, CFG)
    truth = truth_trajectory(d)
    rep = evaluate({"ins": traj}, truth, sched)
    assert rep.metrics["ins"][0].max_horizontal < 0.5


def test_pure_ins_bias_grows_superlinearly():
    errors = SensorErrorSpec(accel_bias=(0.4, -0.3, 0.2),
                             gyro_noise_std=1e-4, accel_noise_std=1e-3,
                             seed=5)
    # outage early, before the filter can estimate the biases
    d, sched, _ = _scenario(duration=80.0, outages=((40.0, 70.0),),
                            errors=errors)
    traj = run_pure_ins(d, CFG)
    truth = truth_trajectory(d)
    rep = evaluate({"ins": traj}, truth, sched)
    curve = rep.curves["ins"][0]
    horiz = np.hypot(curve[:, 1], curve[:, 2])
    mid, late = horiz[15], horiz[30]
    assert late > 2.0 * mid, f"expected superlinear growth: {mid} -> {late}"
    # continuity: error at outage start is at the fused-solution level
    assert horiz[0] < 3.0 * CFG.sigma_gps_ne


def test_hybrid_window_unavailable_at_start():
    d, _, _ = _scenario(duration=30.0, outages=((0.0, 20.0),))
    with pytest.raises(ModelWindowUnavailable):
        run_hybrid(d, ZeroPredictor(), CFG, window_n=5000)


def test_pseudo_bypass_reports_pseudo_positions():
    d, sched, _ = _scenario(duration=90.0, outages=((50.0, 80.0),))
    bypass = run_hybrid(d, ZeroPredictor(), CFG, window_n=50,
                        pseudo_bypass_kf=True, name="bypass")
    start = sched.intervals[0][0]
    idx_anchor = int(np.searchsorted(bypass.t, start - 1e-6)) - 1
    sel = (bypass.t >= start) & (bypass.t < sched.intervals[0][1])
    # zero increments + bypass: reported position frozen at the anchor
    assert np.allclose(bypass.lat[sel], bypass.lat[idx_anchor], atol=1e-12)
    assert np.allclose(bypass.lon[sel], bypass.lon[idx_anchor], atol=1e-12)


def test_evaluate_truth_trajectory_zero_error():
    d, sched, _ = _scenario(duration=90.0, outages=((40.0, 70.0),))
    truth = truth_trajectory(d)
    epochs = truth.t[::100]
    traj = MethodTrajectory("copy", epochs, truth.lat[::100],
                            truth.lon[::100], truth.h[::100])
    rep = evaluate({"copy": traj}, truth, sched)
    m = rep.metrics["copy"][0]
    assert m.max_horizontal < 1e-9
    assert m.rmse_east < 1e-9


def test_evaluate_constructed_east_ramp():
    d, sched, _ = _scenario(duration=90.0, outages=((40.0, 70.0),))
    truth = truth_trajectory(d)
    epochs = truth.t[::100]
    lat = truth.lat[::100].copy()
    lon = truth.lon[::100].copy()
    h = truth.h[::100].copy()
    start, end = sched.intervals[0]
    from spikenav.geodesy import curvature_radii

    for i, t in enumerate(epochs):
        if start <= t <= end:
            east = 5.0 * (t - start) / (end - start)
            _, r_n = curvature_radii(lat[i])
            lon[i] += east / ((r_n + h[i]) * math.cos(lat[i]))
    rep = evaluate({"ramp": MethodTrajectory("ramp", epochs, lat, lon, h)},
                   truth, sched)
    m = rep.metrics["ramp"][0]
    assert m.max_east == pytest.approx(5.0, rel=1e-6)
    assert m.max_north < 1e-9


def test_evaluate_alignment_error():
    d, sched, _ = _scenario(duration=90.0, outages=((40.0, 70.0),))
    truth = truth_trajectory(d)
    bad = MethodTrajectory("bad", np.array([1000.0, 1001.0]),
                           np.array([0.7, 0.7]), np.array([0.2, 0.2]),
                           np.array([100.0, 100.0]))
    with pytest.raises(AlignmentError):
        evaluate({"bad": bad}, truth, sched)


def test_emit_report_layout_and_determinism(tmp_path):
    d, sched, _ = _scenario(duration=180.0,
                            outages=((60.0, 90.0), (120.0, 150.0)))
    truth = truth_trajectory(d)
    trajectories = {"ins": run_pure_ins(d, CFG),
                    "zero": run_hybrid(d, ZeroPredictor(), CFG, window_n=50)}
    rep = evaluate(trajectories, truth, sched, provenance={"seed": 3})
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    files_a = emit_report(rep, out_a)
    emit_report(rep, out_b)

    payload = json.loads((out_a / "metrics.json").read_text())
    assert set(payload["methods"]) == {"ins", "zero"}
    for method in payload["methods"].values():
        assert set(method) == {"outage_1", "outage_2"}
        for cell in method.values():
            assert {"max_east_m", "max_north_m"} <= set(cell)
    # 2 methods x 2 outages x 2 axes of max errors
    count = sum(1 for m in payload["methods"].values() for c in m.values()
                for k in c if k in ("max_east_m", "max_north_m"))
    assert count == 8

    assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()
    for path in files_a:
        twin = out_b / path.name
        assert twin.exists()
        assert path.read_bytes() == twin.read_bytes()


def test_error_curve_row_count(tmp_path):
    duration = 30.0
    d, sched, _ = _scenario(duration=120.0, outages=((60.0, 90.0),))
    truth = truth_trajectory(d)
    rep = evaluate({"ins": run_pure_ins(d, CFG)}, truth, sched)
    emit_report(rep, tmp_path)
    rows = (tmp_path / "errors_ins_outage1.csv").read_text().splitlines()
    assert len(rows) - 1 == int(duration * 1.0) + 1  # duration x rate + 1


def test_trajectory_csv_round_trip(tmp_path):
    d, sched, _ = _scenario(duration=90.0, outages=((40.0, 70.0),))
    truth = truth_trajectory(d)
    rep = evaluate({"ins": run_pure_ins(d, CFG)}, truth, sched)
    emit_report(rep, tmp_path)
    back = load_trajectory_csv(tmp_path / "trajectory_ins.csv")
    orig = rep.methods["ins"]
    assert np.allclose(back.t, orig.t)
    assert np.allclose(back.lat, orig.lat, atol=1e-15)


def test_finetune_smoke():
    from spikenav.pipeline import FinetuneConfig, ModelPredictor
    from spikenav.spikenet import SpikeNetConfig, train_spiking
    from spikenav.datasets import make_windows

    d, sched, _ = _scenario(duration=120.0, outages=((80.0, 110.0),))
    windows = make_windows(d, n=20, stride=2)
    cfg = SpikeNetConfig(window=20, channels=9, d_model=8, heads=2, blocks=1,
                         t_s=2, encoder_kernel=3)
    model, _ = train_spiking(windows, cfg, epochs=2, batch_size=16, seed=0)
    before = {k: v.data.copy() for k, v in model.params.items()}
    traj = run_hybrid(d, ModelPredictor(model, "snn"), CFG, window_n=20,
                      finetune=FinetuneConfig(every_s=20.0, steps=2, batch=4),
                      seed=1)
    assert traj.prediction_entries == 1
    # the original model is untouched; fine-tuning works on a copy
    for k, v in model.params.items():
        assert np.array_equal(v.data, before[k])
