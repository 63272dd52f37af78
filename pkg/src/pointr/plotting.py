"""Static figures written next to JSON reports (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import DIFFICULTIES  # noqa: E402


def plot_tiers(report: dict, path) -> Path:
    """Bar chart of CD-l2 (x1000) per category and difficulty."""
    grid = report["grid"]
    cats = sorted(grid)
    width = 0.8 / len(DIFFICULTIES)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(cats) + 2), 3.5))
    x = np.arange(len(cats))
    for i, d in enumerate(DIFFICULTIES):
        vals = [grid[c][d]["cd_l2"] if d in grid[c] else np.nan for c in cats]
        ax.bar(x + (i - 1) * width, vals, width, label=d)
    ax.set_xticks(x, cats, rotation=30, ha="right")
    ax.set_ylabel("CD-l2 (x1000)")
    ax.set_title(f"CD-Avg {report['summary']['cd_avg']:.3f}")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_loss(log: list[dict], path) -> Path:
    steps = [r["step"] for r in log]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key in ("j", "j0", "j1"):
        ax.plot(steps, [r[key] for r in log], label=key, lw=1.2 if key == "j" else 0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_completion(partial, complete, path, gt=None) -> Path:
    """Three-view scatter: input points dark, predicted missing points light."""
    partial = np.asarray(partial)
    missing = np.asarray(complete)[len(partial):]
    panels = [("input + predicted", partial, missing)]
    if gt is not None:
        panels.append(("ground truth", np.asarray(gt), None))
    fig = plt.figure(figsize=(4 * len(panels), 4))
    for i, (title, a, b) in enumerate(panels, start=1):
        ax = fig.add_subplot(1, len(panels), i, projection="3d")
        ax.scatter(*a.T, s=1, c="#1f3b73")
        if b is not None and len(b):
            ax.scatter(*b.T, s=1, c="#f28e2b")
        ax.set_title(title)
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
