"""Raw breach-record handling: parsing, cleaning, period selection, aggregation.

The record file is UTF-8 comma-delimited with header
``record_id,state,org_name,occurrence_date,report_date,affected_state_residents,is_supplementary,parent_record_id``.
Dates are ISO-8601 or quoted fuzzy strings ("mid Dec. 2019"); an empty field
means the value is absent. Anomalies are handled by rule and counted, never
raised: the cleaning report reconciles every removal.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .quarters import YearQuarter, development_quarter
from .segments import AG_THRESHOLD, SegmentSpec, State
from .triangle import Triangle

HEADER = [
    "record_id",
    "state",
    "org_name",
    "occurrence_date",
    "report_date",
    "affected_state_residents",
    "is_supplementary",
    "parent_record_id",
]


class RecordFormatError(ValueError):
    """Malformed header or row structure in a record file."""


class RecordStreamError(ValueError):
    """Input bytes that do not decode as UTF-8."""


@dataclass(frozen=True)
class BreachRecord:
    record_id: str
    state: State | None
    org_name: str | None
    occurrence_date: dt.date | None
    report_date: dt.date | None
    affected: int | None
    is_supplementary: bool = False
    parent_record_id: str | None = None

    @property
    def delay_quarters(self) -> int | None:
        if self.occurrence_date is None or self.report_date is None:
            return None
        return development_quarter(self.occurrence_date, self.report_date)


@dataclass
class CleaningReport:
    """Per-rule removal counters; records_out reconciles against records_in."""

    records_in: int = 0
    negative_delay_fixed: int = 0
    negative_delay_dropped: int = 0
    supplementary_merged: int = 0
    supplementary_dropped: int = 0
    missing_field_dropped: int = 0
    out_of_period_dropped: int = 0
    below_threshold_dropped: int = 0
    records_out: int = 0

    _REMOVALS = (
        "negative_delay_dropped",
        "supplementary_merged",
        "supplementary_dropped",
        "missing_field_dropped",
        "out_of_period_dropped",
        "below_threshold_dropped",
    )

    def removed(self) -> int:
        return sum(getattr(self, name) for name in self._REMOVALS)

    def consistent(self) -> bool:
        return self.records_out == self.records_in - self.removed()

    def lines(self) -> list[str]:
        out = [f"records_in={self.records_in}"]
        out += [f"{name}={getattr(self, name)}" for name in ("negative_delay_fixed",) + self._REMOVALS]
        out.append(f"records_out={self.records_out}")
        return out


@dataclass(frozen=True)
class CleaningPolicy:
    """Knobs for the by-rule cleaning pass.

    `date_corrections` stands in for the manual lookup of notice letters:
    record ids mapped to (occurrence, report) replacements applied before the
    negative-delay rule.
    """

    date_corrections: dict[str, tuple[dt.date, dt.date]] = field(default_factory=dict)
    drop_below_threshold: bool = True


_MONTHS = {
    m.lower(): i
    for i, m in enumerate(
        ["January", "February", "March", "April", "May", "June", "July",
         "August", "September", "October", "November", "December"],
        start=1,
    )
}
_MONTH_ABBR = {k[:3]: v for k, v in _MONTHS.items()}
_FUZZY_DAY = {"early": 5, "mid": 15, "late": 25}
_FUZZY_RE = re.compile(r"^(early|mid|late)[\s.-]+([A-Za-z]+)\.?,?\s+(\d{4})$", re.IGNORECASE)


def parse_date(text: str) -> dt.date | None:
    """ISO date, else a fuzzy month phrase; anything else is absent."""
    text = text.strip().strip('"')
    if not text:
        return None
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        pass
    m = _FUZZY_RE.match(text)
    if m:
        word, month, year = m.group(1).lower(), m.group(2).lower(), int(m.group(3))
        num = _MONTHS.get(month) or _MONTH_ABBR.get(month[:3])
        if num:
            return dt.date(year, num, _FUZZY_DAY[word])
    return None


def _parse_affected(text: str) -> int | None:
    text = text.strip().strip('"')
    if not text or text.lower() == "unknown":
        return None
    try:
        value = int(text)
    except ValueError:
        return None
    return value if value >= 0 else None


def _parse_bool(text: str) -> bool:
    return text.strip().lower() in ("true", "1", "yes", "y")


def parse_breach_records(source: bytes | io.IOBase | str) -> list[BreachRecord]:
    """Parse a record file; unparseable field values become absent, not errors."""
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        data = source.encode("utf-8")
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise RecordStreamError(f"undecodable byte at offset {exc.start}") from exc

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise RecordFormatError("empty file: missing header") from None
    header = [h.strip() for h in header]
    missing = [col for col in HEADER if col not in header]
    if missing:
        raise RecordFormatError(f"missing column(s): {', '.join(missing)}")
    pos = {col: header.index(col) for col in HEADER}

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) < len(header):
            raise RecordFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")

        def get(col: str) -> str:
            return row[pos[col]].strip()

        state_text = get("state")
        records.append(
            BreachRecord(
                record_id=get("record_id"),
                state=State(state_text) if state_text in State.__members__ else None,
                org_name=get("org_name") or None,
                occurrence_date=parse_date(get("occurrence_date")),
                report_date=parse_date(get("report_date")),
                affected=_parse_affected(get("affected_state_residents")),
                is_supplementary=_parse_bool(get("is_supplementary")),
                parent_record_id=get("parent_record_id") or None,
            )
        )
    return records


def clean_records(
    records: list[BreachRecord], policy: CleaningPolicy | None = None
) -> tuple[list[BreachRecord], CleaningReport]:
    """Apply the by-rule cleaning pass; every removal lands in one counter.

    Order: supplementary merge, required-field check, date correction /
    negative-delay removal, notification-threshold check. Small positive
    delays are accepted as-is; there is no principled filter for them.
    """
    policy = policy or CleaningPolicy()
    report = CleaningReport(records_in=len(records))

    # supplementary notices fold into their parent, which keeps the earliest
    # report date; a supplementary row with no locatable parent is removed.
    # A parent with no original-notice date must not inherit a supplementary
    # date (that would overstate the delay); it stays dateless and falls to
    # the missing-field rule below
    by_id = {r.record_id: r for r in records if not r.is_supplementary}
    merged_dates: dict[str, dt.date] = {}
    survivors: list[BreachRecord] = []
    for rec in records:
        if not rec.is_supplementary:
            survivors.append(rec)
            continue
        parent = by_id.get(rec.parent_record_id or "")
        if parent is None:
            report.supplementary_dropped += 1
            continue
        report.supplementary_merged += 1
        if rec.report_date is not None and parent.report_date is not None:
            best = merged_dates.get(parent.record_id, parent.report_date)
            merged_dates[parent.record_id] = min(best, rec.report_date)
    if merged_dates:
        survivors = [
            replace(r, report_date=merged_dates.get(r.record_id, r.report_date)) for r in survivors
        ]

    out: list[BreachRecord] = []
    for rec in survivors:
        if rec.occurrence_date is None or rec.report_date is None or rec.org_name is None or rec.affected is None:
            report.missing_field_dropped += 1
            continue
        if rec.report_date < rec.occurrence_date:
            fix = policy.date_corrections.get(rec.record_id)
            if fix is not None and fix[1] >= fix[0]:
                rec = replace(rec, occurrence_date=fix[0], report_date=fix[1])
                report.negative_delay_fixed += 1
            else:
                report.negative_delay_dropped += 1
                continue
        if policy.drop_below_threshold and rec.state is not None and rec.affected < AG_THRESHOLD[rec.state]:
            report.below_threshold_dropped += 1
            continue
        out.append(rec)

    report.records_out = len(out)
    return out, report


def select_period(records: list[BreachRecord], seg: SegmentSpec) -> list[BreachRecord]:
    """Records of this segment's state, band, and occurrence window."""
    out = []
    for rec in records:
        if rec.state != seg.state or rec.occurrence_date is None or rec.affected is None:
            continue
        if not seg.band.contains(rec.affected):
            continue
        aq = YearQuarter.of_date(rec.occurrence_date)
        if seg.first_aq <= aq <= seg.last_aq:
            out.append(rec)
    return out


def aggregate_to_triangle(records: list[BreachRecord], seg: SegmentSpec) -> Triangle:
    """Count period-selected records into the segment's square run-off triangle.

    The observation cutoff is the end of the segment's analysis window, so the
    triangle has as many development columns as accident rows; cells beyond
    the cutoff stay unobserved rather than zero.
    """
    n = seg.n_quarters
    counts = np.zeros((n, n))
    for rec in records:
        aq = YearQuarter.of_date(rec.occurrence_date)
        dq = rec.delay_quarters
        if dq is None or dq < 1:
            raise RuntimeError(f"record {rec.record_id}: report precedes occurrence; cleaning contract violated")
        i = aq - seg.first_aq
        if not 0 <= i < n:
            raise RuntimeError(f"record {rec.record_id}: occurrence {aq} outside window; selection contract violated")
        if dq <= n - i:
            counts[i, dq - 1] += 1
    return Triangle(seg, counts, np.ones_like(counts))
