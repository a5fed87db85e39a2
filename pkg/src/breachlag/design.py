"""Predictor-term algebra: basis factors, segment-scoped terms, design matrices.

A `Term` owns exactly one coefficient. Its value on an observation row is the
sum, over the clauses whose segment set contains the row's segment, of the
product of the clause's factor values. This lets one coefficient act on
several segments (shared effects) or bundle distinct indicator patches under
a single estimate.

Calendar anchors (accident-quarter pivots, quarter sets) are stored as
year-quarter labels and compared in absolute terms, so a shared term lines up
across segments regardless of where each window starts. Only the linear and
quadratic accident-quarter factors depend on a numeric index, which is global
(counted from the stacking epoch) unless the spec asks for per-segment
indexing.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .quarters import YearQuarter
from .triangle import ObservationTable, Triangle


class DesignError(ValueError):
    """Raised for malformed factors, terms, or spec/segment mismatches."""


class FactorKind(Enum):
    CONSTANT = "constant"
    AQ_LINEAR = "aq_linear"
    AQ_SQUARE = "aq_square"
    DQ_LINEAR = "dq_linear"
    DQ_MIN_CAP = "dq_min_cap"
    DQ_RAMP = "dq_ramp"
    AQ_RAMP_UP = "aq_ramp_up"
    AQ_RAMP_DOWN = "aq_ramp_down"
    LOG_DQ = "log_dq"
    IND_DQ_SET = "indicator_dq_set"
    IND_AQ_SET = "indicator_aq_set"
    IND_AQ_GE = "indicator_aq_ge"
    IND_CQ_SET = "indicator_cq_set"
    SIGNED_CQ_PAIR = "signed_cq_pair"


# factor kinds that anchor to specific quarters; terms made only of these are
# the "exceptional observation / calendar shock" patches, as opposed to trend
# structure (ramps and >= thresholds count as trend)
EXCEPTION_KINDS = frozenset({FactorKind.IND_AQ_SET, FactorKind.IND_CQ_SET, FactorKind.SIGNED_CQ_PAIR})


@dataclass(frozen=True)
class Factor:
    kind: FactorKind
    cap: int | None = None                      # dq_min_cap / dq_ramp
    pivot: YearQuarter | None = None            # aq ramps, indicator_aq_ge
    dq_set: frozenset[int] | None = None        # indicator_dq_set
    quarters: frozenset[YearQuarter] | None = None  # aq/cq indicator sets
    pair: tuple[YearQuarter, YearQuarter] | None = None  # signed_cq_pair

    def __post_init__(self) -> None:
        k = self.kind
        if k in (FactorKind.DQ_MIN_CAP, FactorKind.DQ_RAMP) and (self.cap is None or self.cap < 1):
            raise DesignError(f"{k.value} needs a positive cap")
        if k in (FactorKind.AQ_RAMP_UP, FactorKind.AQ_RAMP_DOWN, FactorKind.IND_AQ_GE) and self.pivot is None:
            raise DesignError(f"{k.value} needs a pivot quarter")
        if k is FactorKind.IND_DQ_SET and not self.dq_set:
            raise DesignError("indicator_dq_set needs a nonempty set")
        if k in (FactorKind.IND_AQ_SET, FactorKind.IND_CQ_SET) and not self.quarters:
            raise DesignError(f"{k.value} needs a nonempty quarter set")
        if k is FactorKind.SIGNED_CQ_PAIR and self.pair is None:
            raise DesignError("signed_cq_pair needs two quarters")


def eval_factor(f: Factor, aq: YearQuarter, j: int, cq: YearQuarter, idx: int) -> float:
    """Value of one factor at a cell.

    `aq`/`cq` locate the cell in absolute time, `j` is the 1-based development
    quarter, and `idx` is the numeric accident index used by the polynomial
    trend factors (global by default). Total over all in-range inputs.
    """
    k = f.kind
    if k is FactorKind.CONSTANT:
        return 1.0
    if k is FactorKind.AQ_LINEAR:
        return float(idx)
    if k is FactorKind.AQ_SQUARE:
        return float(idx) ** 2
    if k is FactorKind.DQ_LINEAR:
        return float(j)
    if k is FactorKind.DQ_MIN_CAP:
        return float(min(j, f.cap))
    if k is FactorKind.DQ_RAMP:
        return float(max(0, j - f.cap))
    if k is FactorKind.AQ_RAMP_UP:
        return float(max(0, aq - f.pivot))
    if k is FactorKind.AQ_RAMP_DOWN:
        return float(max(0, f.pivot - aq))
    if k is FactorKind.LOG_DQ:
        return math.log(j + 1.0)
    if k is FactorKind.IND_DQ_SET:
        return 1.0 if j in f.dq_set else 0.0
    if k is FactorKind.IND_AQ_SET:
        return 1.0 if aq in f.quarters else 0.0
    if k is FactorKind.IND_AQ_GE:
        return 1.0 if aq >= f.pivot else 0.0
    if k is FactorKind.IND_CQ_SET:
        return 1.0 if cq in f.quarters else 0.0
    if k is FactorKind.SIGNED_CQ_PAIR:
        if cq == f.pair[0]:
            return -1.0
        if cq == f.pair[1]:
            return 1.0
        return 0.0
    raise DesignError(f"unknown factor kind {k!r}")


@dataclass(frozen=True)
class Clause:
    segments: frozenset[str]
    factors: tuple[Factor, ...]

    def is_exceptional(self) -> bool:
        return any(f.kind in EXCEPTION_KINDS for f in self.factors)

    def value(self, aq: YearQuarter, j: int, cq: YearQuarter, idx: int) -> float:
        v = 1.0
        for f in self.factors:
            v *= eval_factor(f, aq, j, cq, idx)
            if v == 0.0:
                break
        return v


@dataclass(frozen=True)
class Term:
    name: str
    clauses: tuple[Clause, ...]

    def segments(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for cl in self.clauses:
            out |= cl.segments
        return out

    def is_intercept_for(self, key: str) -> bool:
        return any(
            key in cl.segments and all(f.kind is FactorKind.CONSTANT for f in cl.factors)
            for cl in self.clauses
        )


@dataclass(frozen=True)
class ZeroWeightRule:
    segments: frozenset[str]
    aq: YearQuarter


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    zero_weight: tuple[ZeroWeightRule, ...] = ()
    aq_index_mode: str = "global"  # or "per_segment"

    def __post_init__(self) -> None:
        names = [t.name for t in self.terms]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise DesignError(f"duplicate term name(s): {', '.join(sorted(dupes))}")
        if self.aq_index_mode not in ("global", "per_segment"):
            raise DesignError(f"aq_index_mode must be global|per_segment, got {self.aq_index_mode!r}")

    @property
    def term_names(self) -> list[str]:
        return [t.name for t in self.terms]

    def covered_segments(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for t in self.terms:
            out |= t.segments()
        return out

    def validate(self) -> None:
        """Zero-weight selectors must name segments that exist."""
        from .segments import SEGMENT_KEYS

        known = self.covered_segments() | frozenset(SEGMENT_KEYS)
        for rule in self.zero_weight:
            stray = rule.segments - known
            if stray:
                raise DesignError(f"zero-weight rule references unknown segment(s): {', '.join(sorted(stray))}")

    def restrict(self, keep: Sequence[str]) -> "ModelSpec":
        """Sub-spec with only the named terms (order preserved)."""
        wanted = set(keep)
        return replace(self, terms=tuple(t for t in self.terms if t.name in wanted))

    def restrict_to_segments(self, keys: Iterable[str]) -> "ModelSpec":
        """Sub-spec keeping terms that touch the given segments.

        Clauses scoped to other segments stay but are inert on a table that
        does not contain them; a shared coefficient then estimates from the
        retained segments only.
        """
        keep = frozenset(keys)
        terms = tuple(t for t in self.terms if t.segments() & keep)
        zero = tuple(r for r in self.zero_weight if r.segments & keep)
        return replace(self, terms=terms, zero_weight=zero)

    def without_exceptions(self) -> "ModelSpec":
        """Drop calendar-shock and exceptional-observation clauses.

        Used for trend-only fitted quantities: clauses pinned to specific
        quarters are removed (a term vanishes once all its clauses are);
        ramp/threshold structure stays.
        """
        kept = []
        for t in self.terms:
            clauses = tuple(cl for cl in t.clauses if not cl.is_exceptional())
            if clauses:
                kept.append(replace(t, clauses=clauses))
        return replace(self, terms=tuple(kept))


def zero_weight_mask(table: ObservationTable, spec: ModelSpec) -> np.ndarray:
    """Multiplier (0/1) implementing the spec's zero-weight selectors."""
    mask = np.ones(len(table))
    for rule in spec.zero_weight:
        for key in rule.segments:
            if key in table.segment_keys:
                rows = table.row_mask(key) & (table.aq_ord == rule.aq.ordinal())
                mask[rows] = 0.0
    return mask


def design_row(spec: ModelSpec, key: str, aq: YearQuarter, j: int, idx: int) -> np.ndarray:
    """One design-matrix row for segment `key` at cell (aq, j)."""
    cq = aq + (j - 1)
    row = np.zeros(len(spec.terms))
    for t, term in enumerate(spec.terms):
        v = 0.0
        for cl in term.clauses:
            if key in cl.segments:
                v += cl.value(aq, j, cq, idx)
        row[t] = v
    return row


def build_design(table: ObservationTable, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design matrix, response, and weight vector for an observation table.

    Column order follows term order. Every segment present must be covered by
    an intercept-bearing term; weights are the table's cell weights after the
    spec's zero-weight selectors.
    """
    spec.validate()
    for key in table.segment_keys:
        if not any(t.is_intercept_for(key) for t in spec.terms):
            raise DesignError(f"segment {key} has no intercept term in the model spec")

    n, p = len(table), len(spec.terms)
    X = np.zeros((n, p))
    aq_cache = {o: YearQuarter(o // 4, o % 4 + 1) for o in np.unique(table.aq_ord)}
    for r in range(n):
        key = table.segment_keys[table.seg[r]]
        aq = aq_cache[table.aq_ord[r]]
        idx = int(table.global_i[r]) if spec.aq_index_mode == "global" else int(table.i[r])
        X[r] = design_row(spec, key, aq, int(table.j[r]), idx)
    y = table.count.copy()
    w = table.weight * zero_weight_mask(table, spec)
    return X, y, w


def cross_classified_spec(triangles: Sequence[Triangle]) -> ModelSpec:
    """One parameter per row and per column of each segment.

    The classical chain-ladder predictor: a segment intercept, an indicator
    per accident quarter past the first, and an indicator per development
    quarter past the first.
    """
    terms: list[Term] = []
    for tri in triangles:
        key = tri.segment.key
        scope = frozenset({key})
        terms.append(Term(f"{key} x intercept", (Clause(scope, (Factor(FactorKind.CONSTANT),)),)))
        for aq in tri.aq_labels[1:]:
            terms.append(
                Term(
                    f"{key} x ind_i_{aq}",
                    (Clause(scope, (Factor(FactorKind.IND_AQ_SET, quarters=frozenset({aq})),)),),
                )
            )
        for j in range(2, tri.n_dq + 1):
            terms.append(
                Term(
                    f"{key} x ind_j_{j}",
                    (Clause(scope, (Factor(FactorKind.IND_DQ_SET, dq_set=frozenset({j})),)),),
                )
            )
    return ModelSpec(terms=tuple(terms))


# ---------------------------------------------------------------------------
# Text format: one term per line, `name := clause (+ clause)*`,
# clause = `[seg,...] factor * factor * ...`. Zero-weight directives:
# `!zero [seg,...] aq YYYYQn`. `#` starts a comment.

_Q = r"\d{4}Q[1-4]"
_FACTOR_PATTERNS: list[tuple[re.Pattern, object]] = []


def _fp(pattern: str, build) -> None:
    _FACTOR_PATTERNS.append((re.compile(f"^{pattern}$"), build))


_fp(r"1", lambda m: Factor(FactorKind.CONSTANT))
_fp(r"i", lambda m: Factor(FactorKind.AQ_LINEAR))
_fp(r"i\^2", lambda m: Factor(FactorKind.AQ_SQUARE))
_fp(r"j", lambda m: Factor(FactorKind.DQ_LINEAR))
_fp(r"min\(j,(\d+)\)", lambda m: Factor(FactorKind.DQ_MIN_CAP, cap=int(m.group(1))))
_fp(r"ramp\(j-(\d+)\)", lambda m: Factor(FactorKind.DQ_RAMP, cap=int(m.group(1))))
_fp(rf"ramp\(i-({_Q})\)", lambda m: Factor(FactorKind.AQ_RAMP_UP, pivot=YearQuarter.parse(m.group(1))))
_fp(rf"ramp\(({_Q})-i\)", lambda m: Factor(FactorKind.AQ_RAMP_DOWN, pivot=YearQuarter.parse(m.group(1))))
_fp(r"log1p_j", lambda m: Factor(FactorKind.LOG_DQ))
_fp(r"ind_j\{([\d,]+)\}", lambda m: Factor(FactorKind.IND_DQ_SET, dq_set=frozenset(int(v) for v in m.group(1).split(","))))
_fp(rf"ind_i\{{({_Q}(?:,{_Q})*)\}}", lambda m: Factor(FactorKind.IND_AQ_SET, quarters=frozenset(YearQuarter.parse(v) for v in m.group(1).split(","))))
_fp(rf"ind_i>=({_Q})", lambda m: Factor(FactorKind.IND_AQ_GE, pivot=YearQuarter.parse(m.group(1))))
_fp(rf"ind_c\{{({_Q}(?:,{_Q})*)\}}", lambda m: Factor(FactorKind.IND_CQ_SET, quarters=frozenset(YearQuarter.parse(v) for v in m.group(1).split(","))))
_fp(rf"sgn_c\(({_Q}),({_Q})\)", lambda m: Factor(FactorKind.SIGNED_CQ_PAIR, pair=(YearQuarter.parse(m.group(1)), YearQuarter.parse(m.group(2)))))


def parse_factor(token: str) -> Factor:
    token = token.strip()
    for pattern, build in _FACTOR_PATTERNS:
        m = pattern.match(token)
        if m:
            return build(m)
    raise DesignError(f"unrecognised factor token {token!r}")


def _parse_clause(text: str) -> Clause:
    text = text.strip()
    m = re.match(r"^\[([^\]]+)\]\s*(.*)$", text)
    if not m:
        raise DesignError(f"clause must start with a [seg,...] scope: {text!r}")
    segs = frozenset(s.strip() for s in m.group(1).split(",") if s.strip())
    if not segs:
        raise DesignError(f"empty segment scope in clause {text!r}")
    body = m.group(2).strip()
    if not body:
        raise DesignError(f"clause has no factors: {text!r}")
    factors = tuple(parse_factor(tok) for tok in body.split("*"))
    return Clause(segs, factors)


def parse_model_spec(text: str, aq_index_mode: str = "global") -> ModelSpec:
    terms: list[Term] = []
    zero: list[ZeroWeightRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("!zero"):
                m = re.match(rf"^!zero\s+\[([^\]]+)\]\s+aq\s+({_Q})$", line)
                if not m:
                    raise DesignError("expected `!zero [seg,...] aq YYYYQn`")
                segs = frozenset(s.strip() for s in m.group(1).split(","))
                zero.append(ZeroWeightRule(segs, YearQuarter.parse(m.group(2))))
                continue
            if ":=" not in line:
                raise DesignError("expected `name := clause (+ clause)*`")
            name, body = line.split(":=", 1)
            clauses = tuple(_parse_clause(part) for part in body.split("+"))
            terms.append(Term(name.strip(), clauses))
        except DesignError as exc:
            raise DesignError(f"line {lineno}: {exc}") from None
    return ModelSpec(terms=tuple(terms), zero_weight=tuple(zero), aq_index_mode=aq_index_mode)


def format_factor(f: Factor) -> str:
    k = f.kind
    if k is FactorKind.CONSTANT:
        return "1"
    if k is FactorKind.AQ_LINEAR:
        return "i"
    if k is FactorKind.AQ_SQUARE:
        return "i^2"
    if k is FactorKind.DQ_LINEAR:
        return "j"
    if k is FactorKind.DQ_MIN_CAP:
        return f"min(j,{f.cap})"
    if k is FactorKind.DQ_RAMP:
        return f"ramp(j-{f.cap})"
    if k is FactorKind.AQ_RAMP_UP:
        return f"ramp(i-{f.pivot})"
    if k is FactorKind.AQ_RAMP_DOWN:
        return f"ramp({f.pivot}-i)"
    if k is FactorKind.LOG_DQ:
        return "log1p_j"
    if k is FactorKind.IND_DQ_SET:
        return "ind_j{" + ",".join(str(v) for v in sorted(f.dq_set)) + "}"
    if k is FactorKind.IND_AQ_SET:
        return "ind_i{" + ",".join(str(q) for q in sorted(f.quarters)) + "}"
    if k is FactorKind.IND_AQ_GE:
        return f"ind_i>={f.pivot}"
    if k is FactorKind.IND_CQ_SET:
        return "ind_c{" + ",".join(str(q) for q in sorted(f.quarters)) + "}"
    if k is FactorKind.SIGNED_CQ_PAIR:
        return f"sgn_c({f.pair[0]},{f.pair[1]})"
    raise DesignError(f"unknown factor kind {k!r}")


def format_model_spec(spec: ModelSpec) -> str:
    lines = []
    for term in spec.terms:
        clauses = " + ".join(
            "[" + ",".join(sorted(cl.segments)) + "] " + " * ".join(format_factor(f) for f in cl.factors)
            for cl in term.clauses
        )
        lines.append(f"{term.name} := {clauses}")
    for rule in spec.zero_weight:
        lines.append(f"!zero [{','.join(sorted(rule.segments))}] aq {rule.aq}")
    return "\n".join(lines) + "\n"
