"""Domain types, file parsing, and validation for CDR, tower, and
demographics inputs.

Timestamps are local civil time with no timezone or DST shifts: the hourly
patterns downstream are in local clock time. Internally they are stored as
integer seconds since the epoch of that civil time (i.e. the naive calendar
mapped onto UTC).

Parsing is total per line: every input row yields either a typed record or a
`RowReject` carrying a machine-readable reason; a malformed row never aborts
the stream. Reject reasons are counted by the callers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime

CALL = "call"
SMS = "sms"
INCOMING = "incoming"
OUTGOING = "outgoing"

_KIND_TOKENS = {"call": CALL, "sms": SMS}
_DIRECTION_TOKENS = {"in": INCOMING, "incoming": INCOMING, "out": OUTGOING, "outgoing": OUTGOING}
_DIRECTION_SHORT = {INCOMING: "in", OUTGOING: "out"}

FEMALE = "female"
MALE = "male"
_GENDER_TOKENS = {"f": FEMALE, "female": FEMALE, "m": MALE, "male": MALE}

AGE_MIN = 10
AGE_MAX = 110

# (label, inclusive upper age bound); the six bands partition [AGE_MIN, AGE_MAX]
AGE_GROUPS = (
    ("teen", 18),
    ("early_adult", 35),
    ("early_middle", 45),
    ("middle", 55),
    ("early_senior", 65),
    ("senior", AGE_MAX),
)
AGE_GROUP_LABELS = tuple(label for label, _ in AGE_GROUPS)


class CdrError(Exception):
    """Base for data-content errors a caller may want to map to exit codes."""


class RowReject(CdrError):
    """A single input row failed validation. `reason` is a stable token."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One call or SMS as seen from one participant (the ego)."""

    ego_id: str
    peer_id: str
    timestamp: int  # seconds since epoch of local civil time
    tower_id: str
    kind: str  # call | sms
    direction: str  # incoming | outgoing


@dataclass(frozen=True)
class ColumnLayout:
    """Positions of the six event fields in a delimited CDR row.

    The canonical layout is ego_id, peer_id, ISO-8601 timestamp, tower_id,
    kind, direction; alternative files are supported by remapping indices.
    """

    ego_id: int = 0
    peer_id: int = 1
    timestamp: int = 2
    tower_id: int = 3
    kind: int = 4
    direction: int = 5

    @property
    def width(self) -> int:
        return max(self.ego_id, self.peer_id, self.timestamp, self.tower_id, self.kind, self.direction) + 1

    @classmethod
    def from_names(cls, names: list[str]) -> "ColumnLayout":
        """Layout from an ordered list of field names, e.g. from a CLI flag."""
        want = {"ego_id", "peer_id", "timestamp", "tower_id", "kind", "direction"}
        idx = {name: i for i, name in enumerate(names)}
        missing = want - idx.keys()
        if missing:
            raise ValueError(f"column layout missing fields: {sorted(missing)}")
        return cls(**{k: idx[k] for k in want})


CANONICAL_LAYOUT = ColumnLayout()

_EPOCH_DAY = date(1970, 1, 1).toordinal()
_date_epoch_cache: dict[str, int] = {}


def parse_timestamp(text: str) -> int:
    """ISO-8601 local timestamp -> epoch seconds of that civil time.

    Fast path for the exact 'YYYY-MM-DD[T ]HH:MM:SS' shape (with a per-date
    cache); anything else falls through to datetime.fromisoformat.
    """
    s = text.strip()
    if len(s) == 19 and s[4] == "-" and s[7] == "-" and s[10] in "T " and s[13] == ":" and s[16] == ":":
        day = _date_epoch_cache.get(s[:10])
        try:
            if day is None:
                day = (date(int(s[0:4]), int(s[5:7]), int(s[8:10])).toordinal() - _EPOCH_DAY) * 86400
                _date_epoch_cache[s[:10]] = day
            hh = int(s[11:13])
            mm = int(s[14:16])
            ss = int(s[17:19])
        except ValueError:
            raise RowReject("bad_timestamp", text)
        if hh > 23 or mm > 59 or ss > 59:
            raise RowReject("bad_timestamp", text)
        return day + hh * 3600 + mm * 60 + ss
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise RowReject("bad_timestamp", text)
    if dt.tzinfo is not None:
        # civil local time only; zone-aware inputs are not comparable
        raise RowReject("bad_timestamp", f"timezone-aware: {text}")
    return (dt.toordinal() - _EPOCH_DAY) * 86400 + dt.hour * 3600 + dt.minute * 60 + dt.second


def format_timestamp(ts: int) -> str:
    """Inverse of parse_timestamp for whole seconds."""
    day, rem = divmod(ts, 86400)
    d = date.fromordinal(day + _EPOCH_DAY)
    return f"{d.isoformat()}T{rem // 3600:02d}:{rem % 3600 // 60:02d}:{rem % 60:02d}"


def year_bounds(year: int) -> tuple[int, int]:
    """[start, end) epoch seconds of a civil year."""
    start = (date(year, 1, 1).toordinal() - _EPOCH_DAY) * 86400
    end = (date(year + 1, 1, 1).toordinal() - _EPOCH_DAY) * 86400
    return start, end


def parse_event_fields(row: list[str], layout: ColumnLayout, year_start: int, year_end: int) -> EventRecord:
    """Validate one already-split CDR row. Raises RowReject on any defect."""
    if len(row) < layout.width:
        raise RowReject("missing_column", ",".join(row))
    ego = row[layout.ego_id].strip()
    peer = row[layout.peer_id].strip()
    tower = row[layout.tower_id].strip()
    if not ego or not peer or not tower:
        raise RowReject("missing_column", ",".join(row))
    if ego == peer:
        raise RowReject("self_call", ego)
    ts = parse_timestamp(row[layout.timestamp])
    if not (year_start <= ts < year_end):
        raise RowReject("outside_year", row[layout.timestamp])
    kind = _KIND_TOKENS.get(row[layout.kind].strip().lower())
    if kind is None:
        raise RowReject("bad_kind", row[layout.kind])
    direction = _DIRECTION_TOKENS.get(row[layout.direction].strip().lower())
    if direction is None:
        raise RowReject("bad_direction", row[layout.direction])
    return EventRecord(ego, peer, ts, tower, kind, direction)


def parse_event_line(line: str, layout: ColumnLayout = CANONICAL_LAYOUT, analysis_year: int = 2008) -> EventRecord:
    """Parse one delimited CDR line; RowReject (never an abort) on bad data."""
    ys, ye = year_bounds(analysis_year)
    return parse_event_fields(next(csv.reader([line])), layout, ys, ye)


def serialize_event(rec: EventRecord) -> str:
    """Canonical column layout; parse_event_line round-trips this exactly."""
    return (
        f"{rec.ego_id},{rec.peer_id},{format_timestamp(rec.timestamp)},"
        f"{rec.tower_id},{rec.kind},{_DIRECTION_SHORT[rec.direction]}"
    )


class TowerRegistry:
    """tower_id -> (lat, lon), with ids held sorted so that the integer
    index of a tower orders identically to its id string (downstream sorts
    rely on this)."""

    def __init__(self, entries: dict[str, tuple[float, float]]):
        import numpy as np

        self.ids: list[str] = sorted(entries)
        self._index = {tid: i for i, tid in enumerate(self.ids)}
        self.lat = np.array([entries[t][0] for t in self.ids], dtype=float)
        self.lon = np.array([entries[t][1] for t in self.ids], dtype=float)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, tower_id: str) -> bool:
        return tower_id in self._index

    def index_of(self, tower_id: str) -> int | None:
        return self._index.get(tower_id)

    def position(self, tower_id: str) -> tuple[float, float]:
        i = self._index[tower_id]
        return float(self.lat[i]), float(self.lon[i])


def load_towers(path) -> TowerRegistry:
    """Read a tower file (tower_id,lat,lon; optional header).

    The registry is small and must be clean: duplicate ids and out-of-range
    coordinates are fatal.
    """
    entries: dict[str, tuple[float, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and _looks_like_header(row, 1)):
                continue
            if len(row) < 3:
                raise CdrError(f"{path}:{lineno}: tower row needs tower_id,lat,lon")
            tid = row[0].strip()
            try:
                lat, lon = float(row[1]), float(row[2])
            except ValueError:
                raise CdrError(f"{path}:{lineno}: unparseable coordinate in {row!r}")
            if not (-90.0 <= lat <= 90.0):
                raise CdrError(f"{path}:{lineno}: latitude out of range: {lat}")
            if not (-180.0 <= lon <= 180.0):
                raise CdrError(f"{path}:{lineno}: longitude out of range: {lon}")
            if tid in entries:
                raise CdrError(f"{path}:{lineno}: duplicate tower id {tid!r}")
            entries[tid] = (lat, lon)
    return TowerRegistry(entries)


@dataclass
class Demographics:
    """ego_id -> (gender, resolved integer age); plus reject counts."""

    entries: dict[str, tuple[str, int]]
    rejected: dict[str, int]

    def gender(self, ego_id: str) -> str | None:
        e = self.entries.get(ego_id)
        return e[0] if e else None

    def age(self, ego_id: str) -> int | None:
        e = self.entries.get(ego_id)
        return e[1] if e else None


# A third column value at or above this is read as a birth year, below as an
# age; no plausible age reaches it and no birth year is under it for any
# analysis year of interest.
_BIRTH_YEAR_THRESHOLD = 200


def load_demographics(path, analysis_year: int = 2008) -> Demographics:
    """Read a demographics file (ego_id,gender,age-or-birth_year).

    Bad rows are rejected and counted per reason, never fatal. Ages outside
    [10, 110] after resolving birth years are rejected.
    """
    entries: dict[str, tuple[str, int]] = {}
    rejected: dict[str, int] = {}

    def reject(reason: str):
        rejected[reason] = rejected.get(reason, 0) + 1

    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and _looks_like_header(row, None)):
                continue
            if len(row) < 3 or not row[0].strip():
                reject("missing_column")
                continue
            gender = _GENDER_TOKENS.get(row[1].strip().lower())
            if gender is None:
                reject("unknown_gender")
                continue
            try:
                value = int(row[2])
            except ValueError:
                reject("bad_age")
                continue
            age = analysis_year - value if value >= _BIRTH_YEAR_THRESHOLD else value
            if not (AGE_MIN <= age <= AGE_MAX):
                reject("age_out_of_range")
                continue
            entries[row[0].strip()] = (gender, age)
    return Demographics(entries, rejected)


def age_group_of(age: int) -> str:
    """One of the six age-group labels; error outside [10, 110]."""
    if not (AGE_MIN <= age <= AGE_MAX):
        raise ValueError(f"age {age} outside [{AGE_MIN}, {AGE_MAX}]")
    for label, upper in AGE_GROUPS:
        if age <= upper:
            return label
    raise AssertionError("unreachable")


def _looks_like_header(row: list[str], numeric_col: int | None) -> bool:
    """Heuristic header detection: the would-be numeric column is not a
    number (tower files), or no column parses as a number at all."""
    if numeric_col is not None:
        try:
            float(row[numeric_col])
            return False
        except (ValueError, IndexError):
            return True
    for cell in row[1:]:
        try:
            float(cell)
            return False
        except ValueError:
            continue
    return True
