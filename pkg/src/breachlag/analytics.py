"""Everything derived from a fitted model: IBNR projection, ultimates,
development-pattern curves, average reporting delay, frequency indices,
growth statistics, and the break-point trend fit on ultimates.

Projection fills the unobserved lower triangle with model means evaluated at
each cell's literal future calendar quarter, so calendar-shock indicators
never invent effects beyond the quarters they name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .design import DesignError, ModelSpec, design_row
from .glm import FitResult
from .quarters import DEFAULT_EPOCH, YearQuarter
from .triangle import Triangle


class AnalyticsError(ValueError):
    """Bad projection/aggregation inputs (horizon, windows, degenerate rows)."""


@dataclass(frozen=True)
class ProjectionResult:
    """Completed triangle for one segment.

    `completed` holds actual counts in observed cells and fitted means below
    the cutoff; `fitted` holds model means everywhere (the smooth surface
    the pattern figures are drawn from). Both are (n_aq, horizon).
    """

    segment_key: str
    aq_labels: tuple[YearQuarter, ...]
    horizon: int
    completed: np.ndarray
    fitted: np.ndarray
    observed: np.ndarray
    zero_weighted_aqs: frozenset[YearQuarter]
    reported_by_aq: np.ndarray
    ibnr_by_aq: np.ndarray

    @property
    def ultimates_by_aq(self) -> np.ndarray:
        return self.reported_by_aq + self.ibnr_by_aq

    def aq_index(self, aq: YearQuarter) -> int:
        try:
            return self.aq_labels.index(aq)
        except ValueError:
            raise AnalyticsError(f"{aq} outside segment window for {self.segment_key}") from None


def _coefficients_of(fit: FitResult | np.ndarray) -> tuple[np.ndarray, tuple[str, ...] | None]:
    if isinstance(fit, FitResult):
        return fit.coefficients, fit.term_names
    return np.asarray(fit, dtype=float), None


def align_coefficients(full_names: tuple[str, ...], coefficients: np.ndarray, sub: ModelSpec) -> np.ndarray:
    by_name = dict(zip(full_names, coefficients))
    missing = [n for n in sub.term_names if n not in by_name]
    if missing:
        raise DesignError(f"no coefficient for term(s): {', '.join(missing)}")
    return np.array([by_name[n] for n in sub.term_names])


def zero_weighted_triangle(tri: Triangle, spec: ModelSpec) -> Triangle:
    """Apply the spec's zero-weight quarters to one triangle's weights."""
    aqs = [
        rule.aq
        for rule in spec.zero_weight
        if tri.segment.key in rule.segments and tri.segment.first_aq <= rule.aq <= tri.segment.last_aq
    ]
    return tri.set_zero_weight(aqs=aqs) if aqs else tri


def fitted_grid(
    coefficients: np.ndarray,
    spec: ModelSpec,
    tri: Triangle,
    horizon: int | None = None,
    epoch: YearQuarter = DEFAULT_EPOCH,
) -> np.ndarray:
    """Model means for every cell (observed and future) up to the horizon."""
    beta = np.asarray(coefficients, dtype=float)
    if len(beta) != len(spec.terms):
        raise DesignError(f"{len(beta)} coefficients for {len(spec.terms)} terms")
    horizon = horizon or tri.n_dq
    key = tri.segment.key
    grid = np.zeros((tri.n_aq, horizon))
    for i, aq in enumerate(tri.aq_labels):
        idx = aq.index_from(epoch) if spec.aq_index_mode == "global" else i + 1
        for j in range(1, horizon + 1):
            eta = float(design_row(spec, key, aq, j, idx) @ beta)
            grid[i, j - 1] = np.exp(min(eta, 700.0))
    return grid


def project_lower(
    fit: FitResult | np.ndarray,
    spec: ModelSpec,
    tri: Triangle,
    horizon: int | None = None,
    epoch: YearQuarter = DEFAULT_EPOCH,
) -> ProjectionResult:
    """Complete the lower triangle with model means.

    Ultimate per accident quarter = actual reported count plus the fitted
    mass in its unobserved cells out to the horizon (default: the triangle's
    own development span).
    """
    horizon = horizon or tri.n_dq
    if horizon < tri.n_dq:
        raise AnalyticsError(f"horizon {horizon} below observed development span {tri.n_dq}")
    beta, names = _coefficients_of(fit)
    if names is not None:
        beta = align_coefficients(names, beta, spec)
    fitted = fitted_grid(beta, spec, tri, horizon, epoch)
    observed = np.zeros((tri.n_aq, horizon), dtype=bool)
    observed[:, : tri.n_dq] = tri.observed
    completed = np.where(observed, np.pad(tri.counts, ((0, 0), (0, horizon - tri.n_dq))), fitted)
    reported = np.where(tri.observed, tri.counts, 0.0).sum(axis=1)
    ibnr = np.where(observed, 0.0, fitted).sum(axis=1)
    zero_aqs = frozenset(
        rule.aq
        for rule in spec.zero_weight
        if tri.segment.key in rule.segments and tri.segment.first_aq <= rule.aq <= tri.segment.last_aq
    )
    return ProjectionResult(
        segment_key=tri.segment.key,
        aq_labels=tuple(tri.aq_labels),
        horizon=horizon,
        completed=completed,
        fitted=fitted,
        observed=observed,
        zero_weighted_aqs=zero_aqs,
        reported_by_aq=reported,
        ibnr_by_aq=ibnr,
    )


@dataclass(frozen=True)
class PatternCurve:
    aq: YearQuarter
    p: np.ndarray  # incremental proportions, one per DQ up to the horizon
    P: np.ndarray  # cumulative proportions; P[-1] == 1

    def cumulative_at(self, j: int) -> float:
        return float(self.P[j - 1])


def dev_pattern(projection: ProjectionResult, aq: YearQuarter, source: str = "fitted") -> PatternCurve:
    """Reporting-pattern proportions for one accident quarter.

    `source="fitted"` uses model means everywhere (the published-figure
    convention); `"blend"` uses actual counts where observed and fitted means
    below the cutoff.
    """
    if source not in ("fitted", "blend"):
        raise AnalyticsError(f"source must be fitted|blend, got {source!r}")
    i = projection.aq_index(aq)
    row = (projection.fitted if source == "fitted" else projection.completed)[i]
    total = row.sum()
    if total <= 0:
        raise AnalyticsError(f"degenerate row: zero ultimate at {aq}")
    p = row / total
    return PatternCurve(aq=aq, p=p, P=np.cumsum(p))


DELAY_CONVENTIONS = ("dq", "dq-half")


def average_delay(curve: PatternCurve, convention: str = "dq") -> float:
    """Mean reporting delay in quarters, weighting DQ j by j (or j - 1/2)."""
    if convention not in DELAY_CONVENTIONS:
        raise AnalyticsError(f"delay convention must be one of {DELAY_CONVENTIONS}, got {convention!r}")
    j = np.arange(1, len(curve.p) + 1, dtype=float)
    if convention == "dq-half":
        j -= 0.5
    return float(np.sum(j * curve.p))


@dataclass(frozen=True)
class DelayPoint:
    aq: YearQuarter
    delay: float        # full model, actual data for zero-weighted quarters
    trend: float        # calendar shocks and exceptional observations removed
    zero_weighted: bool


def delay_series(
    fit: FitResult | np.ndarray,
    spec: ModelSpec,
    tri: Triangle,
    horizon: int | None = None,
    epoch: YearQuarter = DEFAULT_EPOCH,
    convention: str = "dq",
) -> list[DelayPoint]:
    """Average delay per accident quarter, with its exception-free trend.

    Zero-weighted quarters have no meaningful model fit of their own, so the
    headline value there is computed from the data (observed counts plus the
    fitted tail), as done in the published delay figures.
    """
    beta, names = _coefficients_of(fit)
    if names is None:
        names = tuple(spec.term_names)
    full = project_lower(align_coefficients(names, beta, spec), spec, tri, horizon, epoch)
    trend_spec = spec.without_exceptions()
    trend = project_lower(align_coefficients(names, beta, trend_spec), trend_spec, tri, horizon, epoch)
    out = []
    for aq in full.aq_labels:
        masked = aq in full.zero_weighted_aqs
        curve = dev_pattern(full, aq, source="blend" if masked else "fitted")
        out.append(
            DelayPoint(
                aq=aq,
                delay=average_delay(curve, convention),
                trend=average_delay(dev_pattern(trend, aq), convention),
                zero_weighted=masked,
            )
        )
    return out


def freq_index(
    aqs: list[YearQuarter], ultimates: np.ndarray, base_window: tuple[YearQuarter, YearQuarter]
) -> np.ndarray:
    """Ultimates as a percentage of their mean over the base window."""
    lo, hi = base_window
    base = [u for aq, u in zip(aqs, ultimates) if lo <= aq <= hi]
    if not base:
        raise AnalyticsError(f"base window {lo}..{hi} contains no accident quarters")
    mean = float(np.mean(base))
    if mean <= 0:
        raise AnalyticsError("base window mean must be positive")
    return 100.0 * np.asarray(ultimates, dtype=float) / mean


@dataclass(frozen=True)
class GrowthStats:
    window: tuple[YearQuarter, YearQuarter]
    mean_pct: float
    sd_pct: float
    n: int


def growth_stats(
    aqs: list[YearQuarter],
    ultimates: np.ndarray,
    windows: list[tuple[YearQuarter, YearQuarter]],
) -> list[GrowthStats]:
    """Mean and sample sd of percentage quarter-on-quarter growth per window.

    A window (a, b) covers the growth rates of quarters a..b, each measured
    against its predecessor, so u(a-1) must exist and every predecessor must
    be positive.
    """
    series = dict(zip(aqs, np.asarray(ultimates, dtype=float)))
    out = []
    for lo, hi in windows:
        if hi < lo:
            raise AnalyticsError(f"empty growth window {lo}..{hi}")
        rates = []
        q = lo
        while q <= hi:
            prev = series.get(q + (-1))
            cur = series.get(q)
            if prev is None or cur is None:
                raise AnalyticsError(f"window {lo}..{hi}: missing ultimate at {q} or its predecessor")
            if prev <= 0:
                raise AnalyticsError(f"window {lo}..{hi}: zero predecessor at {q}")
            rates.append(100.0 * (cur / prev - 1.0))
            q = q + 1
        if len(rates) < 2:
            raise AnalyticsError(f"window {lo}..{hi} needs at least two growth rates")
        out.append(
            GrowthStats(
                window=(lo, hi),
                mean_pct=float(np.mean(rates)),
                sd_pct=float(np.std(rates, ddof=1)),
                n=len(rates),
            )
        )
    return out


TREND_BREAK_LEVEL = YearQuarter(2020, 1)
TREND_BREAK_RAMP = YearQuarter(2020, 2)
TREND_TERMS = (
    "intercept",
    "aq",
    "aq^2",
    "level_shift_2020Q1",
    "pulse_2020Q1",
    "pulse_2020Q2",
    "ramp_post_2020Q2",
)


@dataclass(frozen=True)
class TrendFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    p_values: np.ndarray
    significant: np.ndarray  # at the 5% level, two-sided Wald
    retained: np.ndarray     # False where a break term was refit to zero
    fitted: np.ndarray       # fitted ultimates (response scale)

    def flag(self, name: str) -> bool:
        return bool(self.significant[TREND_TERMS.index(name)])


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, p = X.shape
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if np.any(diag < 1e-10 * diag[0]):
        bad = int(piv[np.argmax(diag < 1e-10 * diag[0])])
        raise AnalyticsError(f"singular trend design: column {bad} not identifiable in this window")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    pvals = 2.0 * scipy.stats.t.sf(np.abs(beta / se), n - p)
    return beta, se, pvals


def fit_trend(
    aqs: list[YearQuarter],
    ultimates: np.ndarray,
    epoch: YearQuarter = DEFAULT_EPOCH,
    select: bool = True,
) -> TrendFit:
    """Least squares of log ultimates on a quadratic with a 2020 break.

    Regressors: 1, i, i^2, a level shift from 2020Q1, one-quarter pulses at
    2020Q1 and 2020Q2, and a gradient change after 2020Q2. The four break
    terms are near-collinear over a short post-break window, so with
    `select=True` (default) they are screened one at a time: the transient
    pulses first, then the gradient change, last the persistent shift, each
    dropped (refit to zero) if insignificant at 5% in the current refit. The
    shift is thereby judged in the most parsimonious arrangement.
    `select=False` reports single-pass Wald flags on the full design.
    """
    u = np.asarray(ultimates, dtype=float)
    if len(aqs) != len(u):
        raise AnalyticsError("aqs and ultimates must align")
    if len(u) < 8 or not (aqs[0] <= TREND_BREAK_LEVEL <= aqs[-1]):
        raise AnalyticsError("need at least 8 accident quarters spanning 2020Q1")
    if np.any(u <= 0):
        raise AnalyticsError("ultimates must be positive to take logs")
    t = np.array([aq.index_from(epoch) for aq in aqs], dtype=float)
    X = np.column_stack(
        [
            np.ones_like(t),
            t,
            t**2,
            np.array([1.0 if aq >= TREND_BREAK_LEVEL else 0.0 for aq in aqs]),
            np.array([1.0 if aq == TREND_BREAK_LEVEL else 0.0 for aq in aqs]),
            np.array([1.0 if aq == TREND_BREAK_RAMP else 0.0 for aq in aqs]),
            np.array([float(max(0, aq - TREND_BREAK_RAMP)) for aq in aqs]),
        ]
    )
    y = np.log(u)
    active = list(range(7))
    dropped_p: dict[int, float] = {}
    if select:
        _ols(X, y)  # surface singular windows before screening
        for col in (4, 5, 6, 3):
            _, _, pvals = _ols(X[:, active], y)
            p_here = pvals[active.index(col)]
            if p_here >= 0.05:
                dropped_p[col] = float(p_here)
                active.remove(col)
    beta_a, se_a, p_a = _ols(X[:, active], y)
    coefficients = np.zeros(7)
    std_errors = np.zeros(7)
    p_values = np.ones(7)
    retained = np.zeros(7, dtype=bool)
    for k, col in enumerate(active):
        coefficients[col] = beta_a[k]
        std_errors[col] = se_a[k]
        p_values[col] = p_a[k]
        retained[col] = True
    for col, p_drop in dropped_p.items():
        p_values[col] = p_drop
    return TrendFit(
        coefficients=coefficients,
        std_errors=std_errors,
        p_values=p_values,
        significant=retained & (p_values < 0.05),
        retained=retained,
        fitted=np.exp(X[:, active] @ beta_a),
    )
