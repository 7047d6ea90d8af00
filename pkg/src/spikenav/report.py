"""Figure rendering for run reports: error curves and the trajectory plan.

Reads the delimited files a run wrote (metrics.json, errors_*.csv,
trajectory_*.csv) and renders matplotlib figures next to them, so plots can
be regenerated without re-running the pipeline.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geodesy import GeodeticPosition, geodetic_to_local_ne  # noqa: E402
from .pipeline import load_trajectory_csv  # noqa: E402

METHOD_STYLE = {
    "ins": ("tab:red", "standalone INS"),
    "mlp": ("tab:orange", "MLP aided"),
    "snn": ("tab:blue", "spiking net aided"),
    "zero": ("tab:gray", "zero-increment aided"),
    "oracle": ("tab:green", "oracle increments"),
    "fused": ("tab:purple", "fused (no outage)"),
}


def _style(name: str):
    return METHOD_STYLE.get(name, ("black", name))


def _load_curves(run_dir: Path):
    curves: dict[str, dict[int, np.ndarray]] = {}
    for path in sorted(run_dir.glob("errors_*_outage*.csv")):
        stem = path.stem[len("errors_"):]
        method, _, outage = stem.rpartition("_outage")
        rows = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
        curves.setdefault(method, {})[int(outage)] = rows
    return curves


def render_error_curves(run_dir, out_dir=None) -> list[Path]:
    """One figure per outage: east and north error of every method."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = _load_curves(run_dir)
    if not curves:
        return []
    outage_ids = sorted({k for per in curves.values() for k in per})
    written = []
    for oid in outage_ids:
        fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        for method in sorted(curves):
            rows = curves[method].get(oid)
            if rows is None:
                continue
            color, label = _style(method)
            axes[0].plot(rows[:, 0], rows[:, 1], color=color, label=label)
            axes[1].plot(rows[:, 0], rows[:, 2], color=color, label=label)
        axes[0].set_ylabel("east error [m]")
        axes[1].set_ylabel("north error [m]")
        axes[1].set_xlabel("time [s]")
        axes[0].set_title(f"position error during outage {oid}")
        axes[0].grid(alpha=0.3)
        axes[1].grid(alpha=0.3)
        axes[0].legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"errors_outage{oid}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def render_trajectory_plan(run_dir, out_dir=None) -> Path | None:
    """Plan view (east vs north, relative to the first truth point)."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(run_dir.glob("trajectory_*.csv"))
    if not paths:
        return None
    trajectories = {p.stem[len("trajectory_"):]: load_trajectory_csv(p)
                    for p in paths}
    ref_traj = trajectories.get("truth") or next(iter(trajectories.values()))
    ref = GeodeticPosition(ref_traj.lat[0], ref_traj.lon[0], ref_traj.h[0])
    fig, ax = plt.subplots(figsize=(6.5, 6.5))
    for name, traj in sorted(trajectories.items()):
        ne = np.array([geodetic_to_local_ne(
            ref, GeodeticPosition(traj.lat[i], traj.lon[i], traj.h[i]))
            for i in range(len(traj.t))])
        if name == "truth":
            ax.plot(ne[:, 1], ne[:, 0], "k--", linewidth=1.0, label="truth")
        else:
            color, label = _style(name)
            ax.plot(ne[:, 1], ne[:, 0], color=color, linewidth=0.9,
                    label=label)
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_title("trajectory plan view")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "trajectory_plan.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_training_curve(curve_csv, out_dir=None) -> Path | None:
    curve_csv = Path(curve_csv)
    if not curve_csv.exists():
        return None
    out_dir = Path(out_dir) if out_dir else curve_csv.parent
    rows = np.atleast_2d(np.genfromtxt(curve_csv, delimiter=",",
                                       skip_header=1))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(rows[:, 0], rows[:, 1], label="train MSE")
    ax.semilogy(rows[:, 0], rows[:, 2], label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE [m^2]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / (curve_csv.stem + ".png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_all(run_dir, out_dir=None) -> list[Path]:
    """Render every figure a run directory supports."""
    written = render_error_curves(run_dir, out_dir)
    plan = render_trajectory_plan(run_dir, out_dir)
    if plan is not None:
        written.append(plan)
    for curve in sorted(Path(run_dir).glob("training_curve_*.csv")):
        png = render_training_curve(curve, out_dir)
        if png is not None:
            written.append(png)
    return written


def metrics_table(metrics_path) -> str:
    """Human-readable max-error table from a metrics.json file."""
    payload = json.loads(Path(metrics_path).read_text())
    methods = payload["methods"]
    outage_keys = sorted({k for m in methods.values() for k in m})
    lines = ["max position error [m]"]
    header = f"{'':<10}" + "".join(
        f"{k.replace('_', ' '):>22}" for k in outage_keys)
    lines.append(header)
    lines.append(f"{'method':<10}" + "".join(
        f"{'east':>11}{'north':>11}" for _ in outage_keys))
    for name in sorted(methods):
        row = f"{name:<10}"
        for key in outage_keys:
            cell = methods[name].get(key)
            if cell is None:
                row += f"{'-':>11}{'-':>11}"
            else:
                row += f"{cell['max_east_m']:>11.1f}{cell['max_north_m']:>11.1f}"
        lines.append(row)
    return "\n".join(lines)
