"""Year-quarter labels and the index arithmetic the whole pipeline runs on.

Quarters are ordered pairs (year, 1..4). Development quarters are 1-based:
DQ 1 is the quarter of occurrence itself, so a report landing in the same
quarter as its breach has delay 1.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from functools import total_ordering

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


class QuarterError(ValueError):
    """Raised for unparseable or out-of-range quarter labels."""


@total_ordering
@dataclass(frozen=True)
class YearQuarter:
    year: int
    quarter: int

    def __post_init__(self) -> None:
        if self.quarter not in (1, 2, 3, 4):
            raise QuarterError(f"quarter must be 1..4, got {self.quarter}")

    @classmethod
    def parse(cls, label: str) -> "YearQuarter":
        m = _QUARTER_RE.match(label.strip())
        if not m:
            raise QuarterError(f"bad quarter label {label!r}, expected YYYYQn")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def of_date(cls, d: dt.date) -> "YearQuarter":
        return cls(d.year, (d.month - 1) // 3 + 1)

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"

    def ordinal(self) -> int:
        """Monotone integer encoding, unique per quarter."""
        return 4 * self.year + (self.quarter - 1)

    def __lt__(self, other: "YearQuarter") -> bool:
        return self.ordinal() < other.ordinal()

    def __sub__(self, other: "YearQuarter") -> int:
        """Number of quarters from `other` to self (signed)."""
        return self.ordinal() - other.ordinal()

    def __add__(self, n: int) -> "YearQuarter":
        o = self.ordinal() + n
        return YearQuarter(o // 4, o % 4 + 1)

    def index_from(self, epoch: "YearQuarter") -> int:
        """1-based index of this quarter counting `epoch` as 1."""
        return self - epoch + 1

    def start_date(self) -> dt.date:
        return dt.date(self.year, 3 * (self.quarter - 1) + 1, 1)

    def end_date(self) -> dt.date:
        return (self + 1).start_date() - dt.timedelta(days=1)


def quarter_range(first: YearQuarter, last: YearQuarter) -> list[YearQuarter]:
    if last < first:
        raise QuarterError(f"empty quarter range {first}..{last}")
    return [first + k for k in range(last - first + 1)]


def development_quarter(occurrence: dt.date, report: dt.date) -> int:
    """1-based delay in quarters; same-quarter report is DQ 1."""
    return YearQuarter.of_date(report) - YearQuarter.of_date(occurrence) + 1


DEFAULT_EPOCH = YearQuarter(2012, 1)
