"""Tap-event and trip ingestion.

Raw smart-card taps are paired into trips, trips get assigned to the four
daily periods, and non-working days are filtered out.  Two input shapes are
accepted: raw tap events (``card_id,date,time,station_id,direction``) and
pre-paired trips (``card_id,origin,destination,t_start,t_end``); the loader
auto-detects which one a file contains from its header.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, time
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .ioutil import read_csv, write_csv

TAP_HEADER = ["card_id", "date", "time", "station_id", "direction"]
TRIP_HEADER = ["card_id", "origin", "destination", "t_start", "t_end"]

CHECK_IN = "in"
CHECK_OUT = "out"


@dataclass(frozen=True)
class TapEvent:
    """One check-in or check-out registered by the gate system."""

    card_id: str
    station_id: str
    timestamp: datetime
    direction: str

    def __post_init__(self) -> None:
        if self.direction not in (CHECK_IN, CHECK_OUT):
            raise ValidationError(f"direction must be 'in' or 'out', got {self.direction!r}")


@dataclass(frozen=True)
class TripRecord:
    """A single station-to-station trip."""

    card_id: str
    origin: str
    destination: str
    t_start: datetime
    t_end: datetime


@dataclass
class DropStats:
    """Counts of records discarded during pairing/validation, never silent."""

    malformed: int = 0
    unmatched_check_in: int = 0
    unmatched_check_out: int = 0
    zero_duration_pairs: int = 0
    same_station_pairs: int = 0

    @property
    def dropped_events(self) -> int:
        """Single events dropped (same-station pairs counted separately)."""
        return (
            self.malformed
            + self.unmatched_check_in
            + self.unmatched_check_out
            + 2 * self.zero_duration_pairs
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "malformed": self.malformed,
            "unmatched_check_in": self.unmatched_check_in,
            "unmatched_check_out": self.unmatched_check_out,
            "zero_duration_pairs": self.zero_duration_pairs,
            "same_station_pairs": self.same_station_pairs,
        }


@dataclass(frozen=True)
class Period:
    """A named time-of-day window, inclusive at both ends (minute resolution)."""

    name: str
    start: time
    end: time

    def contains(self, t: time) -> bool:
        t = t.replace(second=0, microsecond=0)
        return self.start <= t <= self.end


@dataclass(frozen=True)
class PeriodTable:
    """Ordered, non-overlapping daily periods."""

    periods: tuple[Period, ...]

    def __post_init__(self) -> None:
        ordered = sorted(self.periods, key=lambda p: p.start)
        for prev, nxt in zip(ordered, ordered[1:]):
            if nxt.start <= prev.end:
                raise ValidationError(
                    f"periods {prev.name!r} and {nxt.name!r} overlap"
                )
        for p in self.periods:
            if p.end < p.start:
                raise ValidationError(f"period {p.name!r} ends before it starts")

    @classmethod
    def default(cls) -> "PeriodTable":
        return cls(
            periods=(
                Period("Morning", time(5, 30), time(9, 59)),
                Period("Morning/Afternoon", time(10, 0), time(15, 59)),
                Period("Evening", time(16, 0), time(20, 59)),
                Period("Night", time(21, 0), time(23, 59)),
            )
        )

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.periods]

    def find(self, t: time) -> str | None:
        for p in self.periods:
            if p.contains(t):
                return p.name
        return None


@dataclass(frozen=True)
class WorkCalendar:
    """Dates tagged working / weekend / holiday."""

    working: frozenset[date]
    weekend: frozenset[date] = frozenset()
    holiday: frozenset[date] = frozenset()

    def __post_init__(self) -> None:
        clash = self.working & self.holiday
        if clash:
            raise ValidationError(f"dates tagged both working and holiday: {sorted(clash)}")

    def is_working(self, d: date) -> bool:
        if d in self.working:
            return True
        if d in self.weekend or d in self.holiday:
            return False
        raise ValidationError(f"date {d.isoformat()} is not covered by the calendar")


def _tap_sort_key(ev: TapEvent) -> tuple:
    # check_in sorts before check_out at the same minute so that an
    # in/out pair sharing a timestamp still pairs up (and is then dropped
    # as zero-duration); the station id makes the order total.
    return (ev.timestamp, 0 if ev.direction == CHECK_IN else 1, ev.station_id)


def pair_taps(events: Iterable[TapEvent]) -> tuple[list[TripRecord], DropStats]:
    """Pair check-ins with the next check-out of the same card.

    Strict alternation per card: a check-in followed by another check-in
    drops the first; a check-out with nothing pending is dropped.  Pairs
    at the same station, or without strictly increasing time, never become
    trips.  Every drop is counted in the returned :class:`DropStats`.
    """
    stats = DropStats()
    by_card: dict[str, list[TapEvent]] = defaultdict(list)
    for ev in events:
        by_card[ev.card_id].append(ev)

    trips: list[TripRecord] = []
    for card in sorted(by_card):
        pending: TapEvent | None = None
        for ev in sorted(by_card[card], key=_tap_sort_key):
            if ev.direction == CHECK_IN:
                if pending is not None:
                    stats.unmatched_check_in += 1
                pending = ev
            else:
                if pending is None:
                    stats.unmatched_check_out += 1
                    continue
                if ev.station_id == pending.station_id:
                    stats.same_station_pairs += 1
                elif ev.timestamp <= pending.timestamp:
                    stats.zero_duration_pairs += 1
                else:
                    trips.append(
                        TripRecord(
                            card_id=card,
                            origin=pending.station_id,
                            destination=ev.station_id,
                            t_start=pending.timestamp,
                            t_end=ev.timestamp,
                        )
                    )
                pending = None
        if pending is not None:
            stats.unmatched_check_in += 1
    return trips, stats


def assign_period(trip: TripRecord, table: PeriodTable) -> str | None:
    """Period containing both trip endpoints' times of day, else ``None``."""
    start_period = table.find(trip.t_start.time())
    if start_period is None:
        return None
    if table.find(trip.t_end.time()) != start_period:
        return None
    return start_period


def filter_working_days(
    trips: Sequence[TripRecord], cal: WorkCalendar
) -> list[TripRecord]:
    """Keep trips starting on a working day; order preserved."""
    return [t for t in trips if cal.is_working(t.t_start.date())]


# ---------------------------------------------------------------------------
# file formats


def detect_format(path: str | Path) -> str:
    """Return ``"taps"`` or ``"trips"`` based on a CSV file's header."""
    header, _ = read_csv(path)
    if header == TAP_HEADER:
        return "taps"
    if header == TRIP_HEADER:
        return "trips"
    raise ValidationError(
        f"{path}: unrecognized header {header!r}; expected {TAP_HEADER} or {TRIP_HEADER}"
    )


def _parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text)


def load_taps_csv(path: str | Path) -> tuple[list[TapEvent], DropStats]:
    """Parse a tap-event CSV; malformed rows are counted, not fatal."""
    header, rows = read_csv(path)
    if header != TAP_HEADER:
        raise ValidationError(f"{path}: expected header {TAP_HEADER}, got {header}")
    stats = DropStats()
    events: list[TapEvent] = []
    for row in rows:
        if len(row) != 5:
            stats.malformed += 1
            continue
        card, d, t, station, direction = row
        if direction not in (CHECK_IN, CHECK_OUT):
            stats.malformed += 1
            continue
        try:
            ts = datetime.fromisoformat(f"{d}T{t}")
        except ValueError:
            stats.malformed += 1
            continue
        events.append(TapEvent(card, station, ts, direction))
    return events, stats


def load_trips_csv(path: str | Path) -> tuple[list[TripRecord], DropStats]:
    """Parse a pre-paired trip CSV, applying trip validation with counters."""
    header, rows = read_csv(path)
    if header != TRIP_HEADER:
        raise ValidationError(f"{path}: expected header {TRIP_HEADER}, got {header}")
    stats = DropStats()
    trips: list[TripRecord] = []
    for row in rows:
        if len(row) != 5:
            stats.malformed += 1
            continue
        card, origin, dest, start_s, end_s = row
        try:
            t_start = _parse_timestamp(start_s)
            t_end = _parse_timestamp(end_s)
        except ValueError:
            stats.malformed += 1
            continue
        if origin == dest:
            stats.same_station_pairs += 1
            continue
        if t_end <= t_start:
            stats.zero_duration_pairs += 1
            continue
        trips.append(TripRecord(card, origin, dest, t_start, t_end))
    return trips, stats


def load_input(path: str | Path) -> tuple[list[TripRecord], DropStats]:
    """Load either input shape, pairing taps when needed."""
    kind = detect_format(path)
    if kind == "trips":
        return load_trips_csv(path)
    events, stats = load_taps_csv(path)
    trips, pair_stats = pair_taps(events)
    pair_stats.malformed += stats.malformed
    return trips, pair_stats


def write_trips_csv(
    path: str | Path, trips: Iterable[TripRecord], config_hash: str | None = None
) -> Path:
    rows = (
        (t.card_id, t.origin, t.destination, t.t_start.isoformat(), t.t_end.isoformat())
        for t in trips
    )
    return write_csv(path, TRIP_HEADER, rows, config_hash=config_hash)


def load_calendar_csv(path: str | Path) -> WorkCalendar:
    """One ``date,tag`` line per day, tag in {working, weekend, holiday}."""
    header, rows = read_csv(path)
    if header != ["date", "tag"]:
        raise ValidationError(f"{path}: expected header ['date', 'tag'], got {header}")
    buckets: dict[str, set[date]] = {"working": set(), "weekend": set(), "holiday": set()}
    for row in rows:
        if len(row) != 2 or row[1] not in buckets:
            raise ValidationError(f"{path}: bad calendar line {row!r}")
        try:
            d = date.fromisoformat(row[0])
        except ValueError as exc:
            raise ValidationError(f"{path}: bad date {row[0]!r}") from exc
        buckets[row[1]].add(d)
    return WorkCalendar(
        working=frozenset(buckets["working"]),
        weekend=frozenset(buckets["weekend"]),
        holiday=frozenset(buckets["holiday"]),
    )


def write_calendar_csv(
    path: str | Path, cal: WorkCalendar, config_hash: str | None = None
) -> Path:
    rows = sorted(
        [(d.isoformat(), "working") for d in cal.working]
        + [(d.isoformat(), "weekend") for d in cal.weekend]
        + [(d.isoformat(), "holiday") for d in cal.holiday]
    )
    return write_csv(path, ["date", "tag"], rows, config_hash)
