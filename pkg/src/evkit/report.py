"""Figure rendering for CLI reports.

Figures are written next to the delimited (CSV) outputs they illustrate.
The Agg backend is forced so rendering works headless and byte-identically
across runs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STAGE_COLORS = {"MM": "tab:blue", "Trans": "tab:orange", "CL": "tab:green"}


def pixel_count_histogram(stream) -> tuple[np.ndarray, np.ndarray]:
    """(events_per_pixel values, number of pixels) for a stream's density."""
    counts = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(counts, (stream.y.astype(np.int64), stream.x.astype(np.int64)), 1)
    values, n_pixels = np.unique(counts, return_counts=True)
    return values, n_pixels


def write_histogram_csv(values, n_pixels, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["events_per_pixel", "n_pixels"])
        for v, n in zip(values, n_pixels):
            writer.writerow([int(v), int(n)])


def render_density_histogram(values, n_pixels, path, title="Event density") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(values, n_pixels, width=0.9, color="tab:blue")
    ax.set_xlabel("events per pixel")
    ax.set_ylabel("pixels")
    if len(n_pixels) and max(n_pixels) / max(min(n_pixels), 1) > 100:
        ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_loss_curve(trace, path, smooth: int = 20) -> None:
    """Per-stage loss curves with a running-mean overlay."""
    fig, ax = plt.subplots(figsize=(7, 4))
    by_stage: dict[str, list] = {}
    for row in trace:
        by_stage.setdefault(row.stage, []).append((row.step, row.loss))
    for stage, points in by_stage.items():
        steps = np.array([p[0] for p in points])
        losses = np.array([p[1] for p in points])
        color = _STAGE_COLORS.get(stage, "tab:gray")
        ax.plot(steps, losses, color=color, alpha=0.3)
        if len(losses) >= smooth:
            kernel = np.ones(smooth) / smooth
            smoothed = np.convolve(losses, kernel, mode="valid")
            ax.plot(steps[smooth - 1:], smoothed, color=color, label=stage)
        else:
            ax.plot(steps, losses, color=color, label=stage)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def ensure_out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
