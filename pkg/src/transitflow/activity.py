"""Daily trip chains, H/W/E place labeling and NxEy pattern mining."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .ingest import TripRecord
from .ioutil import write_csv

FIRST_TRIP_CUTOFF = time(10, 0)   # workers leave home before this
EVENING_CUTOFF = time(17, 0)      # and travel again at or after this
DEFAULT_REPORT_FLOOR = 0.01
OTHER_CODE = "other"


@dataclass(frozen=True)
class ActivityChain:
    """Time-ordered trips of one card on one date."""

    card_id: str
    date: str
    trips: tuple[TripRecord, ...]

    @property
    def first_trip(self) -> TripRecord:
        return self.trips[0]


@dataclass(frozen=True)
class LabeledChain:
    """A chain with stations tagged H / W1,W2 / E1,E2,..."""

    chain: ActivityChain
    place_labels: Mapping[str, str]


@dataclass(frozen=True)
class PatternCode:
    nodes: int
    edges: int

    def __post_init__(self) -> None:
        if self.nodes < 2 or self.edges < 1:
            raise ValidationError(f"invalid pattern N{self.nodes}E{self.edges}")

    @property
    def code(self) -> str:
        return f"N{self.nodes}E{self.edges}"


def build_daily_chains(
    trips: Iterable[TripRecord],
) -> tuple[list[ActivityChain], int]:
    """Group trips by (card, date); chains with overlapping trips are
    excluded and counted, never silently dropped."""
    grouped: dict[tuple[str, str], list[TripRecord]] = defaultdict(list)
    for trip in trips:
        grouped[(trip.card_id, trip.t_start.date().isoformat())].append(trip)

    chains: list[ActivityChain] = []
    excluded = 0
    for (card, day) in sorted(grouped):
        ordered = sorted(grouped[(card, day)], key=lambda t: (t.t_start, t.t_end))
        ok = all(
            nxt.t_start >= prev.t_end for prev, nxt in zip(ordered, ordered[1:])
        )
        if not ok:
            excluded += 1
            continue
        chains.append(ActivityChain(card, day, tuple(ordered)))
    return chains, excluded


def select_workers(chains: Iterable[ActivityChain]) -> list[ActivityChain]:
    """Chains starting before 10:00 with at least one later trip at or
    after 17:00."""
    kept = []
    for chain in chains:
        if chain.first_trip.t_start.time() >= FIRST_TRIP_CUTOFF:
            continue
        if any(t.t_start.time() >= EVENING_CUTOFF for t in chain.trips[1:]):
            kept.append(chain)
    return kept


def label_chain(chain: ActivityChain) -> LabeledChain:
    """Assign H / W / E roles to the stations of a worker chain.

    Home is the origin of the first trip and the workplace its
    destination.  The origin of the first trip at or after 17:00 is the
    second workplace when it differs from the first; every other station
    gets an E label in order of first appearance.  A station keeps its
    earliest assigned role.
    """
    labels: dict[str, str] = {}
    first = chain.first_trip
    labels[first.origin] = "H"
    labels.setdefault(first.destination, "W1")

    evening = next(
        (t for t in chain.trips if t.t_start.time() >= EVENING_CUTOFF), None
    )
    if evening is not None:
        labels.setdefault(evening.origin, "W2")

    e_index = 0
    for trip in chain.trips:
        for station in (trip.origin, trip.destination):
            if station not in labels:
                e_index += 1
                labels[station] = f"E{e_index}"
    return LabeledChain(chain=chain, place_labels=labels)


def classify_pattern(labeled: LabeledChain) -> PatternCode:
    """Nodes = distinct stations visited, edges = trips taken."""
    trips = labeled.chain.trips
    stations = {s for t in trips for s in (t.origin, t.destination)}
    return PatternCode(nodes=len(stations), edges=len(trips))


def pattern_distribution(
    codes: Iterable[PatternCode | str],
    report_floor: float = DEFAULT_REPORT_FLOOR,
) -> dict[str, float]:
    """Fractions per pattern code; rare codes are folded into ``other``."""
    names = [c.code if isinstance(c, PatternCode) else str(c) for c in codes]
    if not names:
        raise ValidationError("no pattern codes to summarize")
    counts = Counter(names)
    total = sum(counts.values())
    out: dict[str, float] = {}
    other = 0.0
    for code in sorted(counts):
        frac = counts[code] / total
        if frac < report_floor:
            other += frac
        else:
            out[code] = frac
    if other > 0.0:
        out[OTHER_CODE] = out.get(OTHER_CODE, 0.0) + other
    return out


def write_pattern_csv(
    distribution: Mapping[str, float],
    counts: Mapping[str, int],
    path: str | Path,
    config_hash: str | None = None,
) -> Path:
    rows = [
        (code, counts.get(code, 0), distribution[code])
        for code in sorted(distribution, key=lambda c: (-distribution[c], c))
    ]
    return write_csv(path, ["code", "count", "fraction"], rows, config_hash)


def write_labeled_chains_csv(
    labeled: Sequence[LabeledChain], path: str | Path, config_hash: str | None = None
) -> Path:
    rows = []
    for lc in labeled:
        for seq, trip in enumerate(lc.chain.trips):
            rows.append(
                (
                    lc.chain.card_id,
                    lc.chain.date,
                    seq,
                    trip.origin,
                    lc.place_labels[trip.origin],
                    trip.destination,
                    lc.place_labels[trip.destination],
                    trip.t_start.isoformat(),
                    trip.t_end.isoformat(),
                )
            )
    header = [
        "card_id",
        "date",
        "seq",
        "origin",
        "origin_label",
        "destination",
        "destination_label",
        "t_start",
        "t_end",
    ]
    return write_csv(path, header, rows, config_hash)
