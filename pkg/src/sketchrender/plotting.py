"""Figures rendered next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

import math
import os
import warnings
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    fig.savefig(tmp, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def dt_curves(traces, path: str | Path) -> Path:
    """Mean D_t and its step-to-step decrease per condition."""
    by_cond: dict[str, list[list[float]]] = defaultdict(list)
    for tr in traces:
        by_cond[tr.condition].append([math.nan if d is None else d for d in tr.distances])
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
        cmap = plt.get_cmap("tab20")
        for i, (cond, rows) in enumerate(sorted(by_cond.items())):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)  # tau 0 has no D_t
                d = np.nanmean(np.array(rows, dtype=float), axis=0)
            tau = np.arange(len(d))
            ax1.plot(tau, d, color=cmap(i % 20), lw=1.0, label=cond)
            ax2.plot(tau[1:], d[:-1] - d[1:], color=cmap(i % 20), lw=0.8)
        ax1.set_ylabel("D_t")
        ax2.set_ylabel("D_prev - D_t")
        ax2.axhline(0.0, color="0.5", lw=0.6)
        ax2.set_xlabel("scheduler step")
        ax1.legend(ncol=4, frameon=False)
        return _save(fig, path)


def switch_boxplot(raw_rows: Sequence[dict], path: str | Path) -> Path:
    groups: dict[float, list[int]] = defaultdict(list)
    for r in raw_rows:
        groups[float(r["delta"])].append(int(r["switch_step"]))
    deltas = sorted(groups)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.boxplot([groups[d] for d in deltas])
        ax.set_xticks(range(1, len(deltas) + 1), [f"{d:g}" for d in deltas])
        ax.set_xlabel("delta")
        ax.set_ylabel("switch step")
        return _save(fig, path)


def psnr_distribution(per_run: Sequence[dict], labels: Sequence[str], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for lab in labels:
            vals = [r["psnr"] for r in per_run if r["policy"] == lab and math.isfinite(r["psnr"])]
            if vals:
                ax.hist(vals, bins=20, alpha=0.55, label=f"{lab} (var {np.var(vals):.2f})")
        ax.set_xlabel("PSNR vs sketch-only (dB)")
        ax.set_ylabel("runs")
        ax.legend(frameon=False)
        return _save(fig, path)


def image_grids(grids: dict[str, np.ndarray], path: str | Path) -> Path:
    """Stack paired grids (top row baseline, bottom row perturbed) per window."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(grids), 1, figsize=(6.0, 1.8 * len(grids)), squeeze=False)
        for ax, (name, grid) in zip(axes[:, 0], grids.items()):
            ax.imshow(np.asarray(grid).reshape(grid.shape[-2:]), cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(name)
            ax.axis("off")
        return _save(fig, path)


def speedup_bars(reports, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        x = np.arange(len(reports))
        ax.bar(x - 0.2, [r.predicted_speedup for r in reports], 0.4, label="predicted (FLOPs)")
        ax.bar(x + 0.2, [r.measured_speedup for r in reports], 0.4, label="measured (wall)")
        ax.set_xticks(x, [r.label for r in reports], rotation=30, ha="right")
        ax.set_ylabel("speedup vs sketch-only")
        ax.legend(frameon=False)
        return _save(fig, path)
