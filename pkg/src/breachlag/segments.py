"""The fifteen (state, severity band) data segments and their analysis windows.

Each segment slices one state's notifications to one resident-count band and
an occurrence window inside which reporting was already mandatory, so counts
are comparable across quarters. The windows are fixed properties of each
state's notification regime, not tuning knobs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .quarters import YearQuarter, quarter_range


class State(str, Enum):
    CA = "CA"
    DE = "DE"
    IN = "IN"
    ME = "ME"
    MT = "MT"
    ND = "ND"
    OR = "OR"
    WA = "WA"


class SeverityBand(str, Enum):
    """Resident-count bands; GE bands are open-ended."""

    SMALL = "0-249"
    MID = "250-499"
    GE250 = ">=250"
    GE500 = ">=500"

    def contains(self, affected: int) -> bool:
        if self is SeverityBand.SMALL:
            return 0 <= affected <= 249
        if self is SeverityBand.MID:
            return 250 <= affected <= 499
        if self is SeverityBand.GE250:
            return affected >= 250
        return affected >= 500


@dataclass(frozen=True)
class SegmentSpec:
    key: str
    state: State
    band: SeverityBand
    first_aq: YearQuarter
    last_aq: YearQuarter

    @property
    def n_quarters(self) -> int:
        return self.last_aq - self.first_aq + 1

    def quarters(self) -> list[YearQuarter]:
        return quarter_range(self.first_aq, self.last_aq)

    def __str__(self) -> str:
        return self.key


def _seg(key: str, state: State, band: SeverityBand, first: str, last: str) -> SegmentSpec:
    return SegmentSpec(key, state, band, YearQuarter.parse(first), YearQuarter.parse(last))


# Occurrence windows per state (start of mandatory AG notification, or first
# quarter with usable reports, through end of data).
_WINDOWS = {
    State.CA: ("2012Q1", "2021Q4"),
    State.DE: ("2018Q2", "2021Q4"),
    State.IN: ("2014Q1", "2021Q2"),
    State.ME: ("2013Q1", "2020Q2"),
    State.MT: ("2015Q4", "2021Q4"),
    State.ND: ("2019Q1", "2021Q4"),
    State.OR: ("2016Q1", "2021Q4"),
    State.WA: ("2015Q4", "2021Q4"),
}

# Resident-count threshold above which the state AG must be notified at all.
# Entries below the threshold are recording noise, not reportable breaches.
AG_THRESHOLD = {
    State.CA: 500,
    State.DE: 500,
    State.IN: 0,
    State.ME: 0,
    State.MT: 0,
    State.ND: 250,
    State.OR: 250,
    State.WA: 500,
}

_COMBINATIONS = [
    ("CA500", State.CA, SeverityBand.GE500),
    ("DE500", State.DE, SeverityBand.GE500),
    ("IN1", State.IN, SeverityBand.SMALL),
    ("IN250", State.IN, SeverityBand.MID),
    ("IN500", State.IN, SeverityBand.GE500),
    ("ME1", State.ME, SeverityBand.SMALL),
    ("ME250", State.ME, SeverityBand.MID),
    ("ME500", State.ME, SeverityBand.GE500),
    ("MT1", State.MT, SeverityBand.SMALL),
    ("MT250", State.MT, SeverityBand.MID),
    ("MT500", State.MT, SeverityBand.GE500),
    ("ND250", State.ND, SeverityBand.MID),
    ("ND500", State.ND, SeverityBand.GE500),
    ("OR250", State.OR, SeverityBand.GE250),
    ("WA500", State.WA, SeverityBand.GE500),
]

SEGMENTS: dict[str, SegmentSpec] = {
    key: _seg(key, state, band, *_WINDOWS[state]) for key, state, band in _COMBINATIONS
}

SEGMENT_KEYS = tuple(SEGMENTS)


def segment(key: str) -> SegmentSpec:
    try:
        return SEGMENTS[key]
    except KeyError:
        raise KeyError(f"unknown segment {key!r}; expected one of {', '.join(SEGMENT_KEYS)}") from None
