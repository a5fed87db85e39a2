"""Static figure emission for the report and diagnose paths.

All renderers take data already computed by the analytics/diagnostics
modules and write a vector-graphics file; nothing here does statistics.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analytics import DelayPoint, PatternCurve, ProjectionResult

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 4.2),
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
        "svg.hashsalt": "breachlag",  # deterministic ids for byte-stable output
    }
)

FIGURE_FORMAT = "svg"


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format=FIGURE_FORMAT, metadata={"Date": None})
    plt.close(fig)
    return path


def _aq_ticks(ax, labels: list[str]) -> None:
    step = max(1, len(labels) // 10)
    ax.set_xticks(range(0, len(labels), step))
    ax.set_xticklabels(labels[::step], rotation=45, ha="right")


def frequency_figure(proj: ProjectionResult, index: np.ndarray | None, path: Path) -> Path:
    """Reported vs ultimate counts per accident quarter, optional index inset."""
    labels = [str(a) for a in proj.aq_labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots()
    ax.plot(x, proj.reported_by_aq, marker="o", ms=3, label="reported")
    ax.plot(x, proj.ultimates_by_aq, marker="s", ms=3, label="ultimate (incl. projected)")
    ax.fill_between(x, proj.reported_by_aq, proj.ultimates_by_aq, alpha=0.2)
    ax.set_ylabel("breaches")
    ax.set_title(f"{proj.segment_key}: reported versus ultimate by accident quarter")
    _aq_ticks(ax, labels)
    if index is not None:
        ax2 = ax.twinx()
        ax2.plot(x, index, color="tab:green", lw=1, alpha=0.7, label="index (% of base)")
        ax2.set_ylabel("% of base-window mean")
        ax2.grid(False)
    ax.legend(loc="upper left")
    return _finish(fig, path)


def pattern_figure(curves: list[PatternCurve], segment_key: str, path: Path, max_dq: int | None = None) -> Path:
    """Cumulative reporting proportions for a set of accident quarters."""
    fig, ax = plt.subplots()
    for curve in curves:
        upto = max_dq or len(curve.P)
        ax.plot(range(1, upto + 1), curve.P[:upto], marker=".", label=str(curve.aq))
    ax.set_xlabel("development quarter")
    ax.set_ylabel("cumulative proportion reported")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"{segment_key}: fitted reporting pattern")
    ax.legend(fontsize=7, ncol=2)
    return _finish(fig, path)


def delay_figure(points: list[DelayPoint], segment_key: str, path: Path) -> Path:
    """Average delay per accident quarter against its exception-free trend."""
    labels = [str(p.aq) for p in points]
    x = np.arange(len(points))
    fig, ax = plt.subplots()
    ax.plot(x, [p.delay for p in points], marker="o", ms=3, label="fitted (zero-weight quarters: actual)")
    ax.plot(x, [p.trend for p in points], lw=2, alpha=0.8, label="trend")
    masked = [k for k, p in enumerate(points) if p.zero_weighted]
    if masked:
        ax.plot(masked, [points[k].delay for k in masked], "x", color="tab:red", label="zero-weighted")
    ax.set_ylabel("average delay (quarters)")
    ax.set_title(f"{segment_key}: average reporting delay")
    _aq_ticks(ax, labels)
    ax.legend()
    return _finish(fig, path)


def z_heatmap_figure(series: list[tuple[str, str, float]], segment_key: str, path: Path) -> Path:
    """Three one-row panels of Z scores by DQ, AQ, and CQ."""
    fig, axes = plt.subplots(3, 1, figsize=(8.0, 4.8))
    vmax = max(1.0, max(abs(z) for _, _, z in series))
    for ax, axis in zip(axes, ("DQ", "AQ", "CQ")):
        rows = [(label, z) for a, label, z in series if a == axis]
        values = np.array([[z for _, z in rows]])
        im = ax.imshow(values, aspect="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_yticks([])
        step = max(1, len(rows) // 12)
        ax.set_xticks(range(0, len(rows), step))
        ax.set_xticklabels([rows[k][0] for k in range(0, len(rows), step)], rotation=45, ha="right", fontsize=6)
        ax.set_ylabel(axis, rotation=0, labelpad=14)
        ax.grid(False)
    fig.colorbar(im, ax=axes, shrink=0.8, label="Z score")
    fig.suptitle(f"{segment_key}: Z scores by development, accident, and calendar quarter")
    fig.savefig(path, format=FIGURE_FORMAT, metadata={"Date": None})
    plt.close(fig)
    return path


def residual_heatmap_figure(cells: list, segment_key: str, path: Path) -> Path:
    """Deviance residuals on the AQ x DQ grid; masked cells hatched out."""
    aqs = sorted({c.aq for c in cells})
    n_dq = max(c.dq for c in cells)
    grid = np.full((len(aqs), n_dq), np.nan)
    for c in cells:
        grid[aqs.index(c.aq), c.dq - 1] = np.nan if c.masked else c.value
    fig, ax = plt.subplots(figsize=(7.5, 5.0))
    vmax = np.nanmax(np.abs(grid)) if np.isfinite(grid).any() else 1.0
    im = ax.imshow(grid, aspect="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax)
    step = max(1, len(aqs) // 12)
    ax.set_yticks(range(0, len(aqs), step))
    ax.set_yticklabels(aqs[::step], fontsize=6)
    ax.set_xlabel("development quarter")
    ax.grid(False)
    fig.colorbar(im, ax=ax, label="deviance residual")
    ax.set_title(f"{segment_key}: deviance residuals")
    return _finish(fig, path)
