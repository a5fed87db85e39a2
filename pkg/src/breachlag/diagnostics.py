"""Actual-versus-fitted marginal tables, Z scores, and heatmap exports.

Conventions mirror the published diagnostics: the development- and
calendar-quarter tables exclude zero-weighted accident quarters, while the
accident-quarter table keeps every quarter (a zero-weighted one simply shows
how far the trend missed it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .glm import deviance_residuals
from .triangle import AXES, Triangle, TriangleError, marginal_sums


class DiagnosticsError(ValueError):
    """Degenerate labels (fitted 0 against actual > 0) or shape mismatches."""


@dataclass(frozen=True)
class AFRow:
    label: str
    actual: float
    fitted: float
    ratio: float
    z: float


@dataclass(frozen=True)
class AFTable:
    axis: str
    rows: tuple[AFRow, ...]

    def row(self, label: str) -> AFRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(f"no {self.axis} label {label}")

    def total_actual(self) -> float:
        return sum(r.actual for r in self.rows)

    def total_fitted(self) -> float:
        return sum(r.fitted for r in self.rows)


def af_table(
    fitted_means: np.ndarray,
    actuals: Triangle,
    axis: str,
    include_masked: bool = False,
) -> AFTable:
    """Per-label sums of actual and fitted events with ratios and Z scores.

    `fitted_means` is a per-cell grid matching the triangle. Z = (actual -
    fitted)/sqrt(fitted); a label with fitted 0 and actual 0 reports ratio 1
    and Z 0.
    """
    if axis not in AXES:
        raise TriangleError(f"axis must be one of {AXES}, got {axis!r}")
    act = marginal_sums(actuals, axis, include_zero_weight=include_masked)
    fit = dict(marginal_sums(actuals, axis, values=fitted_means, include_zero_weight=include_masked))
    rows = []
    for label, a in act:
        a, f = float(a), float(fit[label])
        if f <= 0:
            if a > 0:
                raise DiagnosticsError(f"{axis} {label}: actual {a:g} against zero fitted mass")
            rows.append(AFRow(label, a, f, 1.0, 0.0))
        else:
            rows.append(AFRow(label, a, f, a / f, (a - f) / math.sqrt(f)))
    return AFTable(axis=axis, rows=tuple(rows))


def diagnostic_tables(fitted_means: np.ndarray, actuals: Triangle) -> dict[str, AFTable]:
    """The three marginal tables under the reference exclusion conventions."""
    return {
        "DQ": af_table(fitted_means, actuals, "DQ"),
        "AQ": af_table(fitted_means, actuals, "AQ", include_masked=True),
        "CQ": af_table(fitted_means, actuals, "CQ"),
    }


@dataclass(frozen=True)
class HeatmapCell:
    aq: str
    dq: int
    value: float
    masked: bool


def residual_heatmap(fitted_means: np.ndarray, actuals: Triangle) -> list[HeatmapCell]:
    """Per-cell deviance residuals; zero-weight cells emitted masked with 0."""
    grid = np.asarray(fitted_means, dtype=float)
    if grid.shape != actuals.counts.shape:
        raise DiagnosticsError(f"fitted grid {grid.shape} does not match triangle {actuals.counts.shape}")
    obs = actuals.observed
    out = []
    for i, aq in enumerate(actuals.aq_labels):
        for j in range(actuals.n_dq):
            if not obs[i, j]:
                continue
            w = actuals.weights[i, j]
            r = float(deviance_residuals(actuals.counts[i : i + 1, j], grid[i : i + 1, j], np.array([w]))[0])
            out.append(HeatmapCell(str(aq), j + 1, r if w > 0 else 0.0, masked=w == 0))
    return out


def z_heatmap(tables: dict[str, AFTable]) -> list[tuple[str, str, float]]:
    """Aligned (axis, label, z) series for the three-panel Z heatmap."""
    out = []
    for axis in AXES:
        if axis not in tables:
            raise DiagnosticsError(f"missing {axis} table")
        out.extend((axis, row.label, row.z) for row in tables[axis].rows)
    return out


def format_af_table(table: AFTable) -> str:
    """Fixed-precision text layout, two decimals like the published tables."""
    head = f"{'label':>8s} {'actual':>10s} {'fitted':>10s} {'ratio':>7s} {'z':>7s}"
    lines = [f"Sum of events by {table.axis}", head]
    for r in table.rows:
        lines.append(f"{r.label:>8s} {r.actual:10.2f} {r.fitted:10.2f} {r.ratio:7.2f} {r.z:7.2f}")
    return "\n".join(lines) + "\n"


def af_table_csv(tables: dict[str, AFTable]) -> str:
    """Machine export at full precision: axis,label,actual,fitted,ratio,z."""
    lines = ["axis,label,actual,fitted,ratio,z"]
    for axis in AXES:
        for r in tables[axis].rows:
            lines.append(f"{axis},{r.label},{r.actual!r},{r.fitted!r},{r.ratio!r},{r.z!r}")
    return "\n".join(lines) + "\n"
