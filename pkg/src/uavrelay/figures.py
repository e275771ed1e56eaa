"""Matplotlib rendering of run outputs, written next to the CSV tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.0, 4.0)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["savefig.dpi"] = 130

_METRIC_LABELS = {
    "objective": "composite objective",
    "coverage": "coverage ratio",
    "sum_rate": "sum rate (bit/s)",
    "fairness_counts": "Jain fairness (loads)",
    "fairness_rates": "Jain fairness (rates)",
    "sched_sum_rate": "scheduled sum rate (bit/s)",
    "wall_time_s": "optimization wall time (s)",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_method_comparison(summary, out_dir, metrics=("objective", "coverage", "sum_rate"),
                           prefix="scenario1") -> list:
    """Mean +- CI per method against fleet size, one figure per metric."""
    out_dir = Path(out_dir)
    written = []
    for metric in metrics:
        cells = [s for s in summary if s["metric"] == metric]
        if not cells:
            continue
        fig, ax = plt.subplots()
        for method in sorted({c["method"] for c in cells}):
            pts = sorted([c for c in cells if c["method"] == method],
                         key=lambda c: c["uav_count"])
            x = [c["uav_count"] for c in pts]
            y = [c["mean"] for c in pts]
            err = [c["ci95"] for c in pts]
            if len(x) == 1 and x[0] == 0:  # direct-satellite reference line
                ax.axhline(y[0], linestyle="--", label=method)
            else:
                ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=method)
        ax.set_xlabel("number of UAVs")
        ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
        ax.legend()
        written.append(_save(fig, out_dir / f"{prefix}_{metric}.png"))
    return written


def plot_timeline(timeline, out_dir, prefix="scenario2") -> list:
    """Sum-rate bars across the failure/recovery timeline (mean over reps)."""
    out_dir = Path(out_dir)
    stages = {}
    for t in timeline:
        key = (t["stage"], t["label"])
        stages.setdefault(key, []).append(t["sum_rate"])
    order = sorted(stages.keys(), key=lambda k: (k[0], k[1] != "degraded"))
    labels = [f"s{s} {l}" for s, l in order]
    means = [float(np.mean(stages[k])) for k in order]
    fig, ax = plt.subplots()
    colors = ["tab:gray" if "degraded" in l else "tab:blue" for l in labels]
    ax.bar(range(len(means)), means, color=colors)
    ax.set_xticks(range(len(means)), labels, rotation=30, ha="right")
    ax.set_ylabel(_METRIC_LABELS["sum_rate"])
    return [_save(fig, out_dir / f"{prefix}_timeline.png")]


def plot_sweep(rows, out_dir, prefix, metrics=("objective", "sum_rate", "coverage")) -> list:
    """Median metric against the sweep variant (gps sigma / fidelity)."""
    out_dir = Path(out_dir)
    written = []
    for metric in metrics:
        data = {}
        for r in rows:
            if r["metric"] != metric:
                continue
            data.setdefault(r["variant"], []).append(r["value"])
        if not data:
            continue
        variants = sorted(data.keys(), key=lambda v: float(v.split("=")[1]))
        fig, ax = plt.subplots()
        ax.boxplot([data[v] for v in variants], labels=variants)
        ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
        written.append(_save(fig, out_dir / f"{prefix}_{metric}.png"))
    return written


def plot_visibility(result, out_dir, prefix="satvis") -> list:
    """Visible-satellite counts over time plus the elevation histogram."""
    out_dir = Path(out_dir)
    hours = np.arange(len(result.counts)) * (
        (result.times[1] - result.times[0]).total_seconds() / 3600.0
        if len(result.times) > 1 else 1.0)
    fig, ax = plt.subplots()
    for j, th in enumerate(result.thresholds):
        ax.step(hours, result.counts[:, j], where="mid", label=f">= {th:g} deg")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("visible satellites")
    ax.legend()
    written = [_save(fig, out_dir / f"{prefix}_counts.png")]
    fig, ax = plt.subplots()
    if len(result.elevations):
        ax.hist(result.elevations, bins=30)
    ax.set_xlabel("elevation angle (deg)")
    ax.set_ylabel("samples")
    written.append(_save(fig, out_dir / f"{prefix}_histogram.png"))
    return written


def plot_coverage_map(grid_db, extent, out_dir, name="coverage_map") -> list:
    out_dir = Path(out_dir)
    fig, ax = plt.subplots()
    shown = np.clip(np.nan_to_num(grid_db, neginf=-20.0), -20.0, 50.0)
    im = ax.imshow(shown, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="max SINR (dB)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.grid(False)
    return [_save(fig, out_dir / f"{name}.png")]


def plot_trial_trace(trials, out_dir, name="optimize_trace") -> list:
    """Objective per trial with the running incumbent."""
    out_dir = Path(out_dir)
    vals = [t["objective"] for t in trials]
    fig, ax = plt.subplots()
    ax.plot(vals, ".", alpha=0.5, label="trial")
    ax.plot(np.maximum.accumulate(vals), "-", label="incumbent")
    ax.set_xlabel("trial")
    ax.set_ylabel(_METRIC_LABELS["objective"])
    ax.legend()
    return [_save(fig, out_dir / f"{name}.png")]
