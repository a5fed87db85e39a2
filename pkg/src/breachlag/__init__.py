"""Quarterly run-off triangle reserving for state data-breach notifications.

Pipeline: raw notification records -> cleaned quarterly triangles ->
over-dispersed Poisson fits with a segment-scoped term algebra -> IBNR
projection, reporting-pattern and delay analytics, and fit diagnostics.
All core objects are immutable and the operations pure, so per-segment work
parallelises trivially.
"""

from .analytics import (
    ProjectionResult,
    average_delay,
    delay_series,
    dev_pattern,
    fit_trend,
    freq_index,
    growth_stats,
    project_lower,
)
from .chainladder import cl_complete, dev_factors
from .design import ModelSpec, build_design, cross_classified_spec, parse_model_spec
from .diagnostics import af_table, residual_heatmap, z_heatmap
from .glm import (
    FitResult,
    deviance_residuals,
    fit_odp,
    predict,
    simulate_counts,
    simulate_from_model,
)
from .published_model import PUBLISHED_DISPERSION, published_coefficients, published_model_spec
from .quarters import YearQuarter
from .records import aggregate_to_triangle, clean_records, parse_breach_records, select_period
from .segments import SEGMENT_KEYS, SegmentSpec, segment
from .triangle import Triangle, load_embedded_triangle, load_embedded_triangles, marginal_sums, stack

__all__ = [
    "PUBLISHED_DISPERSION",
    "FitResult",
    "ModelSpec",
    "ProjectionResult",
    "SEGMENT_KEYS",
    "SegmentSpec",
    "Triangle",
    "YearQuarter",
    "af_table",
    "aggregate_to_triangle",
    "average_delay",
    "build_design",
    "cl_complete",
    "clean_records",
    "cross_classified_spec",
    "delay_series",
    "dev_factors",
    "dev_pattern",
    "deviance_residuals",
    "fit_odp",
    "fit_trend",
    "freq_index",
    "growth_stats",
    "load_embedded_triangle",
    "load_embedded_triangles",
    "marginal_sums",
    "parse_breach_records",
    "parse_model_spec",
    "predict",
    "project_lower",
    "published_coefficients",
    "published_model_spec",
    "residual_heatmap",
    "segment",
    "select_period",
    "simulate_counts",
    "simulate_from_model",
    "stack",
    "z_heatmap",
]

__version__ = "0.1.0"
