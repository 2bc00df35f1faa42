"""Static SVG result plots rendered from run CSVs.

Two plot kinds: validation loss per epoch for one or more pretraining
runs, and test accuracy against labeled-subset size (log-scaled x) for a
sweep. Both refuse empty inputs before touching the output path, so a
failed plot never leaves a stale file behind.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .errors import FormatError, IngestionError


def read_metrics_csv(path) -> list:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"metrics file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    needed = {"epoch", "split", "metric", "value"}
    if rows and not needed <= set(rows[0]):
        raise FormatError(f"{path} lacks metrics columns {sorted(needed)}")
    return rows


def read_sweep_csv(path) -> list:
    """Aggregate rows from a sweep CSV (aggregated or per-seed layout)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"sweep file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    cols = set(rows[0])
    if {"variant", "subset_size", "mean_accuracy"} <= cols:
        return [
            {
                "variant": r["variant"],
                "subset_size": int(r["subset_size"]),
                "mean_accuracy": float(r["mean_accuracy"]),
                "std_accuracy": float(r.get("std_accuracy", 0.0) or 0.0),
            }
            for r in rows
        ]
    if {"variant", "subset_size", "test_accuracy"} <= cols:
        groups: dict = {}
        for r in rows:
            key = (r["variant"], int(r["subset_size"]))
            groups.setdefault(key, []).append(float(r["test_accuracy"]))
        out = []
        for (variant, size), accs in groups.items():
            n = len(accs)
            mean = sum(accs) / n
            var = sum((a - mean) ** 2 for a in accs) / n
            out.append(
                {
                    "variant": variant,
                    "subset_size": size,
                    "mean_accuracy": mean,
                    "std_accuracy": var**0.5,
                }
            )
        return out
    raise FormatError(f"{path} is neither a sweep rows CSV nor an aggregate CSV")


def plot_validation_curves(metric_files: dict, out_path, metric: str = "info_nce") -> Path:
    """One validation-loss curve per labeled metrics CSV -> SVG."""
    curves = {}
    for label, path in metric_files.items():
        rows = [
            (int(r["epoch"]), float(r["value"]))
            for r in read_metrics_csv(path)
            if r["split"] == "valid" and r["metric"] == metric
        ]
        if rows:
            rows.sort()
            curves[label] = rows
    if not curves:
        raise FormatError(f"no validation '{metric}' rows found; nothing to plot")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in sorted(curves.items()):
        epochs, values = zip(*rows)
        ax.plot(epochs, values, marker="o", markersize=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"validation {metric.replace('_', ' ')}")
    ax.set_title("Validation loss during pretraining")
    ax.grid(True, alpha=0.3)
    ax.legend()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_accuracy_vs_labels(sweep_csv, out_path) -> Path:
    """Mean test accuracy against labeled-subset size, log-scaled x -> SVG."""
    rows = read_sweep_csv(sweep_csv)
    if not rows:
        raise FormatError(f"sweep file {sweep_csv} has no result rows; nothing to plot")
    by_variant: dict = {}
    for r in rows:
        by_variant.setdefault(r["variant"], []).append(r)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for variant in sorted(by_variant):
        pts = sorted(by_variant[variant], key=lambda r: r["subset_size"])
        sizes = [p["subset_size"] for p in pts]
        means = [p["mean_accuracy"] for p in pts]
        stds = [p["std_accuracy"] for p in pts]
        ax.errorbar(sizes, means, yerr=stds, marker="o", markersize=3, capsize=2, label=variant)
    ax.set_xscale("log")
    ax.set_xlabel("labeled training examples")
    ax.set_ylabel("mean test accuracy")
    ax.set_title("Label efficiency")
    ax.grid(True, alpha=0.3, which="both")
    ax.legend()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return out_path
