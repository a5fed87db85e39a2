"""Run-off triangle storage and the stacked observation table fed to the fitter.

A triangle holds incremental counts indexed by accident quarter (row) and
development quarter (column). Only the upper triangle is observed: cell
(i, j), both 1-based, is visible iff i + j - 1 <= cutoff index. Weights start
at 1 and are only ever zeroed, to exclude exceptional quarters from fitting
without touching the counts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .quarters import DEFAULT_EPOCH, YearQuarter
from .segments import SEGMENT_KEYS, SegmentSpec, segment

AXES = ("AQ", "DQ", "CQ")


class TriangleError(ValueError):
    """Raised for malformed triangles or out-of-range indexing."""


@dataclass(frozen=True)
class Triangle:
    """Incremental AQ x DQ counts with per-cell prior weights.

    `counts` and `weights` are (n_aq, n_dq) arrays; entries outside the
    observed upper triangle are zero and ignored by every operation.
    """

    segment: SegmentSpec
    counts: np.ndarray
    weights: np.ndarray
    cutoff: YearQuarter = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if counts.shape != weights.shape or counts.ndim != 2:
            raise TriangleError(f"counts {counts.shape} and weights {weights.shape} must be equal 2-d shapes")
        if np.any(counts < 0) or np.any(counts != np.floor(counts)):
            raise TriangleError("counts must be nonnegative integers")
        if np.any((weights < 0) | (weights > 1)):
            raise TriangleError("weights must lie in [0, 1]")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "weights", weights)
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", self.segment.first_aq + (self.n_aq - 1))
        counts_lower = counts[~self.observed]
        if np.any(counts_lower != 0):
            raise TriangleError("counts present beyond the observation cutoff")

    @property
    def n_aq(self) -> int:
        return self.counts.shape[0]

    @property
    def n_dq(self) -> int:
        return self.counts.shape[1]

    @property
    def aq_labels(self) -> list[YearQuarter]:
        return [self.segment.first_aq + k for k in range(self.n_aq)]

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask of cells on or above the cutoff diagonal."""
        cut = self.cutoff - self.segment.first_aq + 1  # diagonal index of the cutoff CQ
        i = np.arange(1, self.n_aq + 1)[:, None]
        j = np.arange(1, self.n_dq + 1)[None, :]
        return i + j - 1 <= cut

    def total(self) -> int:
        return int(self.counts[self.observed].sum())

    def aq_index(self, aq: YearQuarter) -> int:
        """0-based row index for an accident-quarter label."""
        idx = aq - self.segment.first_aq
        if not 0 <= idx < self.n_aq:
            raise TriangleError(f"{aq} outside {self.segment.key} window")
        return idx

    def cumulative_row(self, i: int) -> np.ndarray:
        """Running sums of the observed part of row i (0-based)."""
        if not 0 <= i < self.n_aq:
            raise TriangleError(f"row {i} out of range 0..{self.n_aq - 1}")
        row = self.counts[i, self.observed[i]]
        return np.cumsum(row)

    def set_zero_weight(self, aqs: Iterable[YearQuarter] = (), cells: Iterable[tuple[YearQuarter, int]] = ()) -> "Triangle":
        """New triangle with the selected accident quarters / cells weighted 0."""
        weights = self.weights.copy()
        for aq in aqs:
            weights[self.aq_index(aq), :] = 0.0
        for aq, j in cells:
            if not 1 <= j <= self.n_dq:
                raise TriangleError(f"DQ {j} out of range 1..{self.n_dq}")
            weights[self.aq_index(aq), j - 1] = 0.0
        return Triangle(self.segment, self.counts, weights, self.cutoff)


def marginal_sums(
    tri: Triangle,
    axis: str,
    values: np.ndarray | None = None,
    include_zero_weight: bool = False,
) -> list[tuple[str, float]]:
    """Sum actual counts (or supplied per-cell values) along one axis.

    Cells with weight 0 are skipped unless `include_zero_weight`; fully
    zero-weighted labels then drop out of the result, mirroring how excluded
    quarters are left off the published marginal tables.
    """
    if axis not in AXES:
        raise TriangleError(f"axis must be one of {AXES}, got {axis!r}")
    grid = tri.counts if values is None else np.asarray(values, dtype=float)
    if grid.shape != tri.counts.shape:
        raise TriangleError(f"values shape {grid.shape} does not match triangle {tri.counts.shape}")
    mask = tri.observed if include_zero_weight else (tri.observed & (tri.weights > 0))
    aqs = tri.aq_labels
    out: dict[str, float] = {}
    for i in range(tri.n_aq):
        for j in range(tri.n_dq):
            if not mask[i, j]:
                continue
            if axis == "AQ":
                label = str(aqs[i])
            elif axis == "DQ":
                label = f"DQ{j + 1}"
            else:
                label = str(aqs[i] + j)
            out[label] = out.get(label, 0.0) + grid[i, j]
    return sorted(out.items(), key=lambda kv: _label_order(kv[0]))


def _label_order(label: str) -> tuple:
    if label.startswith("DQ"):
        return (0, int(label[2:]))
    return (1, label)


@dataclass(frozen=True)
class ObservationTable:
    """Observed cells of one or more triangles, flattened for model fitting.

    One row per observed cell. `i`, `j`, `c` are the 1-based within-segment
    indices with c = i + j - 1; `global_i` indexes the accident quarter from
    the shared epoch so trend terms line up across segments with different
    start quarters.
    """

    epoch: YearQuarter
    segment_keys: tuple[str, ...]
    seg: np.ndarray        # per-row index into segment_keys
    i: np.ndarray
    j: np.ndarray
    c: np.ndarray
    global_i: np.ndarray
    aq_ord: np.ndarray     # per-row YearQuarter.ordinal() of the accident quarter
    cq_ord: np.ndarray     # per-row ordinal of the calendar quarter
    count: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.count)

    def segment_of(self, row: int) -> str:
        return self.segment_keys[self.seg[row]]

    def row_mask(self, key: str) -> np.ndarray:
        return self.seg == self.segment_keys.index(key)


def stack(triangles: Sequence[Triangle], epoch: YearQuarter = DEFAULT_EPOCH) -> ObservationTable:
    """Fuse triangles into one observation table over a common epoch."""
    keys = [t.segment.key for t in triangles]
    if len(set(keys)) != len(keys):
        raise TriangleError(f"duplicate segment keys in stack: {keys}")
    seg, ii, jj, cc, gi, aq_o, cq_o, cnt, wt = [], [], [], [], [], [], [], [], []
    for s, tri in enumerate(triangles):
        obs = tri.observed
        first = tri.segment.first_aq
        for i in range(tri.n_aq):
            aq = first + i
            for j in range(tri.n_dq):
                if not obs[i, j]:
                    continue
                seg.append(s)
                ii.append(i + 1)
                jj.append(j + 1)
                cc.append(i + j + 1)
                gi.append(aq.index_from(epoch))
                aq_o.append(aq.ordinal())
                cq_o.append((aq + j).ordinal())
                cnt.append(tri.counts[i, j])
                wt.append(tri.weights[i, j])
    return ObservationTable(
        epoch=epoch,
        segment_keys=tuple(keys),
        seg=np.array(seg, dtype=int),
        i=np.array(ii, dtype=int),
        j=np.array(jj, dtype=int),
        c=np.array(cc, dtype=int),
        global_i=np.array(gi, dtype=int),
        aq_ord=np.array(aq_o, dtype=int),
        cq_ord=np.array(cq_o, dtype=int),
        count=np.array(cnt, dtype=float),
        weight=np.array(wt, dtype=float),
    )


# ---------------------------------------------------------------------------
# Triangle CSV interchange: segment,aq,dq,count,weight


def _format_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def write_triangle_csv(tri: Triangle, fh: io.TextIOBase) -> None:
    fh.write("segment,aq,dq,count,weight\n")
    obs = tri.observed
    for i, aq in enumerate(tri.aq_labels):
        for j in range(tri.n_dq):
            if obs[i, j]:
                fh.write(f"{tri.segment.key},{aq},{j + 1},{int(tri.counts[i, j])},{_format_weight(tri.weights[i, j])}\n")


def read_triangle_csv(fh: io.TextIOBase, segments: dict[str, SegmentSpec] | None = None) -> list[Triangle]:
    """Read one or more triangles from the delimited interchange format."""
    reader = csv.DictReader(fh)
    needed = {"segment", "aq", "dq", "count", "weight"}
    if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
        missing = sorted(needed - set(reader.fieldnames or ()))
        raise TriangleError(f"triangle file missing column(s): {', '.join(missing)}")
    cells: dict[str, dict[tuple[YearQuarter, int], tuple[int, float]]] = {}
    for row in reader:
        key = row["segment"].strip()
        aq = YearQuarter.parse(row["aq"])
        cells.setdefault(key, {})[(aq, int(row["dq"]))] = (int(row["count"]), float(row["weight"]))
    out = []
    for key, grid in cells.items():
        spec = (segments or {}).get(key) or (segment(key) if key in SEGMENT_KEYS else None)
        aqs = sorted({aq for aq, _ in grid})
        max_dq = max(j for _, j in grid)
        if spec is None:
            spec = SegmentSpec(key, state=None, band=None, first_aq=aqs[0], last_aq=aqs[-1])  # type: ignore[arg-type]
        n_aq = spec.last_aq - spec.first_aq + 1
        n_dq = max(max_dq, n_aq)
        counts = np.zeros((n_aq, n_dq))
        weights = np.ones((n_aq, n_dq))
        for (aq, j), (count, weight) in grid.items():
            counts[aq - spec.first_aq, j - 1] = count
            weights[aq - spec.first_aq, j - 1] = weight
        out.append(Triangle(spec, counts, weights))
    return out


def load_embedded_triangle(key: str) -> Triangle:
    """Load one of the fifteen segments shipped with the package."""
    spec = segment(key)
    with resources.files("breachlag").joinpath(f"data/triangles/{key}.csv").open("r", encoding="utf-8") as fh:
        (tri,) = read_triangle_csv(fh, {key: spec})
    return tri


def load_embedded_triangles(keys: Iterable[str] = SEGMENT_KEYS) -> list[Triangle]:
    return [load_embedded_triangle(k) for k in keys]


def embedded_triangle_path(key: str) -> Path:
    return Path(str(resources.files("breachlag").joinpath(f"data/triangles/{key}.csv")))
