"""Command-line surface: simulate, train, fuse, eval, report.

Exit codes: 0 success, 1 usage error, 2 data error. The output directory
resolves as: --out flag, then the SPIKENAV_OUT environment variable, then
the config file, then the built-in default.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datasets as ds
from .config import RunConfig, TrainingParams, load_run_config, run_config_from_dict
from .datasets import (
    GpsNoiseSpec,
    OutageSchedule,
    SensorErrorSpec,
    TrajectoryProfile,
    generate_synthetic,
    inject_outages,
    load_csv,
    make_windows,
    save_csv,
)
from .pipeline import (
    AlignmentError,
    ModelPredictor,
    ModelWindowUnavailable,
    RunReport,
    ZeroPredictor,
    config_digest,
    emit_report,
    evaluate,
    load_trajectory_csv,
    run_fusion,
    run_hybrid,
    run_pure_ins,
    truth_trajectory,
)
from .spikenet import (
    DivergedLoss,
    EmptyDataset,
    SpikeNetConfig,
    load_model,
    train_mlp,
    train_spiking,
    write_curve_csv,
)

DATA_ERRORS = (ds.ParseError, ds.NonMonotonicTime, ds.UnknownProfile,
               ds.ScheduleOutOfRange, ds.OverlappingIntervals,
               ds.InsufficientData, EmptyDataset, DivergedLoss,
               ModelWindowUnavailable, AlignmentError, FileNotFoundError,
               json.JSONDecodeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(args, config: RunConfig | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("SPIKENAV_OUT")
    if env:
        return Path(env)
    if config is not None:
        return Path(config.out_dir)
    return Path("runs/out")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    return RunConfig()


def _resolve_dataset(args, config: RunConfig):
    """Dataset from CSV paths when given, else from the synthetic recipe."""
    if getattr(args, "imu", None):
        if not getattr(args, "gps", None):
            raise ds.InsufficientData("--imu requires --gps")
        return load_csv(args.imu, args.gps, getattr(args, "truth", None))
    src = config.dataset
    if src.imu_path:
        return load_csv(src.imu_path, src.gps_path, src.truth_path)
    profile = src.profile or TrajectoryProfile()
    return generate_synthetic(profile, src.errors, src.duration,
                              rates=(src.imu_rate, src.gps_rate),
                              gps_noise=src.gps_noise)


def _schedule(args, config: RunConfig) -> OutageSchedule:
    if getattr(args, "outages", None):
        return OutageSchedule.from_file(args.outages)
    return config.schedule()


def cmd_simulate(args) -> int:
    config = _load_config(args)
    src = config.dataset
    profile = src.profile or TrajectoryProfile()
    if args.profile:
        profile = replace(profile, kind=args.profile)
    if args.duration:
        src = replace(src, duration=args.duration)
    if args.seed is not None:
        src = replace(src, errors=replace(src.errors, seed=args.seed))
    d = generate_synthetic(profile, src.errors, src.duration,
                           rates=(src.imu_rate, src.gps_rate),
                           gps_noise=src.gps_noise)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(d, out / "imu.csv", out / "gps.csv", out / "truth.csv")
    meta = {"profile": profile.kind, "duration_s": src.duration,
            "imu_rate_hz": src.imu_rate, "gps_rate_hz": src.gps_rate,
            "seed": src.errors.seed,
            "n_imu": len(d.imu), "n_gps": len(d.gps)}
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True,
                                                 indent=2) + "\n")
    print(f"wrote {len(d.imu)} IMU rows, {len(d.gps)} GPS fixes to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    d = _resolve_dataset(args, config)
    schedule = _schedule(args, config)
    if schedule.intervals:
        d = inject_outages(d, schedule)
    tp = config.training
    epochs = args.epochs or tp.epochs
    batch = args.batch or tp.batch_size
    lr = args.lr or tp.lr
    seed = args.seed if args.seed is not None else config.seed
    net_cfg = config.net
    if args.window:
        net_cfg = replace(net_cfg, window=args.window)
    windows = make_windows(d, n=net_cfg.window, stride=tp.window_stride)
    print(f"training on {len(windows)} windows "
          f"({net_cfg.window} samples each)")
    if args.arch == "snn":
        model, curve = train_spiking(windows, net_cfg, epochs=epochs,
                                     batch_size=batch, seed=seed, lr=lr,
                                     val_fraction=tp.val_fraction)
    else:
        model, curve = train_mlp(windows, window=net_cfg.window,
                                 channels=net_cfg.channels, epochs=epochs,
                                 batch_size=batch, seed=seed, lr=lr,
                                 hidden=tp.mlp_hidden,
                                 val_fraction=tp.val_fraction)
    out_path = Path(args.model)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(out_path)
    curve_path = args.curve or out_path.with_name(
        f"training_curve_{args.arch}.csv")
    write_curve_csv(curve, curve_path)
    best = min(v for _, _, v in curve)
    print(f"saved {args.arch} model to {out_path} "
          f"(best val MSE {best:.4f} m^2, curve: {curve_path})")
    return 0


def cmd_fuse(args) -> int:
    config = _load_config(args)
    d_clean = _resolve_dataset(args, config)
    schedule = _schedule(args, config)
    d = inject_outages(d_clean, schedule) if schedule.intervals else d_clean
    filter_cfg = config.filter
    seed = args.seed if args.seed is not None else config.seed

    trajectories = {}
    window_n = None
    for model_path in args.model or []:
        model = load_model(model_path)
        predictor = ModelPredictor(model)
        window_n = getattr(getattr(model, "config", None), "window",
                           None) or model.window
        trajectories[predictor.name] = run_hybrid(
            d, predictor, filter_cfg, window_n=window_n,
            finetune=config.finetune, seed=seed)
    trajectories["ins"] = run_pure_ins(d, filter_cfg)
    if args.zero_baseline:
        trajectories["zero"] = run_hybrid(d, ZeroPredictor(), filter_cfg,
                                          window_n=window_n or config.net.window)
    truth = truth_trajectory(d)
    provenance = {"seed": seed, "config_digest": config_digest(config.to_dict()),
                  "models": [str(m) for m in (args.model or [])]}
    report = evaluate(trajectories, truth, schedule, provenance)
    out = _out_dir(args, config)
    written = emit_report(report, out)
    config.to_json(out / "config_snapshot.json")
    from .report import metrics_table

    print(metrics_table(out / "metrics.json"))
    print(f"wrote {len(written) + 1} files to {out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    schedule = (OutageSchedule.from_file(args.outages) if args.outages
                else None)
    snapshot = run_dir / "config_snapshot.json"
    if schedule is None:
        if not snapshot.exists():
            raise AlignmentError(
                f"{run_dir}: no outage schedule (pass --outages)")
        schedule = load_run_config(snapshot).schedule()
    truth = load_trajectory_csv(run_dir / "trajectory_truth.csv")
    trajectories = {}
    for path in sorted(run_dir.glob("trajectory_*.csv")):
        name = path.stem[len("trajectory_"):]
        if name == "truth":
            continue
        trajectories[name] = load_trajectory_csv(path)
    if not trajectories:
        raise AlignmentError(f"{run_dir}: no method trajectories found")
    provenance = {"recomputed_from": str(run_dir)}
    report = evaluate(trajectories, truth, schedule, provenance)
    out = _out_dir(args) if (args.out or os.environ.get("SPIKENAV_OUT")) \
        else run_dir
    emit_report(report, out)
    from .report import metrics_table

    print(metrics_table(Path(out) / "metrics.json"))
    return 0


def cmd_report(args) -> int:
    from .report import metrics_table, render_all

    run_dir = Path(args.run)
    out = _out_dir(args) if (args.out or os.environ.get("SPIKENAV_OUT")) \
        else run_dir
    written = render_all(run_dir, out)
    metrics = run_dir / "metrics.json"
    if metrics.exists():
        print(metrics_table(metrics))
    for path in written:
        print(f"figure: {path}")
    if not written:
        print(f"{run_dir}: nothing to render", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="spikenav",
                     description="GPS/INS fusion with a spiking-network "
                                 "aid for GPS outages")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset")
    p_sim.add_argument("--config", help="run-config JSON")
    p_sim.add_argument("--profile", choices=ds.PROFILE_KINDS)
    p_sim.add_argument("--duration", type=float)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="fit an increment model")
    p_train.add_argument("--config", help="run-config JSON")
    p_train.add_argument("--imu", help="IMU CSV path")
    p_train.add_argument("--gps", help="GPS CSV path")
    p_train.add_argument("--truth", help="truth CSV path")
    p_train.add_argument("--outages", help="outage schedule file")
    p_train.add_argument("--arch", choices=("snn", "mlp"), default="snn")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--window", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--curve", help="training-curve CSV path")
    p_train.add_argument("--model", required=True, help="output model file")
    p_train.set_defaults(func=cmd_train)

    p_fuse = sub.add_parser("fuse", help="run fusion and baselines")
    p_fuse.add_argument("--config", help="run-config JSON")
    p_fuse.add_argument("--imu")
    p_fuse.add_argument("--gps")
    p_fuse.add_argument("--truth")
    p_fuse.add_argument("--outages")
    p_fuse.add_argument("--model", action="append",
                        help="trained model file (repeatable)")
    p_fuse.add_argument("--zero-baseline", action="store_true",
                        help="also run the zero-increment baseline")
    p_fuse.add_argument("--seed", type=int)
    p_fuse.add_argument("--out")
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="recompute metrics from trajectories")
    p_eval.add_argument("--run", required=True, help="run directory")
    p_eval.add_argument("--outages")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_rep = sub.add_parser("report", help="render figures from a run")
    p_rep.add_argument("--run", required=True, help="run directory")
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"spikenav {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
