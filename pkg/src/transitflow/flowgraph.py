"""Directed station-to-station flow matrices per (date, period)."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date as date_type
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import PeriodTable, TripRecord, assign_period
from .ioutil import read_csv, read_json, write_csv, write_json

DAY = "day"
AGGREGATE = "aggregate"


@dataclass(frozen=True)
class Station:
    """Row of the stations file."""

    station_id: str
    name: str
    lat: float
    lon: float
    division_group: str


@dataclass
class FlowMatrix:
    """Dense directed trip-count matrix over a fixed station universe."""

    station_index: tuple[str, ...]
    counts: np.ndarray
    date: str
    period: str

    def __post_init__(self) -> None:
        self.station_index = tuple(self.station_index)
        self.counts = np.asarray(self.counts)
        n = len(self.station_index)
        if len(set(self.station_index)) != n:
            raise ValidationError("station_index contains duplicates")
        if self.counts.shape != (n, n):
            raise ValidationError(
                f"counts shape {self.counts.shape} does not match {n} stations"
            )
        if np.any(self.counts < 0):
            raise ValidationError("flow counts must be nonnegative")
        if np.any(np.diag(self.counts) != 0):
            raise ValidationError("flow matrix diagonal must be zero")

    @property
    def n_stations(self) -> int:
        return len(self.station_index)

    @property
    def total_trips(self) -> int:
        return int(self.counts.sum())

    def index_of(self, station_id: str) -> int:
        try:
            return self.station_index.index(station_id)
        except ValueError as exc:
            raise ValidationError(f"unknown station {station_id!r}") from exc


def build_flow_matrix(
    trips: Iterable[TripRecord],
    date: date_type | str,
    period: str,
    table: PeriodTable,
    stations: Sequence[str],
) -> FlowMatrix:
    """Count trips of one date assigned to one period (or ``"day"`` for all).

    Raises if a trip references a station missing from ``stations``.
    """
    stations = list(stations)
    if not stations:
        raise ValidationError("station list is empty")
    if len(set(stations)) != len(stations):
        raise ValidationError("station list contains duplicates")
    date_str = date if isinstance(date, str) else date.isoformat()
    index = {s: i for i, s in enumerate(stations)}
    counts = np.zeros((len(stations), len(stations)), dtype=np.int64)
    for trip in trips:
        if trip.t_start.date().isoformat() != date_str:
            continue
        if period != DAY and assign_period(trip, table) != period:
            continue
        for sid in (trip.origin, trip.destination):
            if sid not in index:
                raise ValidationError(f"trip references unknown station {sid!r}")
        counts[index[trip.origin], index[trip.destination]] += 1
    return FlowMatrix(tuple(stations), counts, date_str, period)


def aggregate(matrices: Sequence[FlowMatrix]) -> FlowMatrix:
    """Entrywise sum of matrices sharing one station universe."""
    if not matrices:
        raise ValidationError("nothing to aggregate")
    first = matrices[0]
    for fm in matrices[1:]:
        if fm.station_index != first.station_index:
            raise ValidationError("station_index mismatch between flow matrices")
    total = np.zeros_like(first.counts)
    for fm in matrices:
        total = total + fm.counts
    dates = {fm.date for fm in matrices}
    periods = {fm.period for fm in matrices}
    date = dates.pop() if len(dates) == 1 else AGGREGATE
    period = periods.pop() if len(periods) == 1 else DAY
    return FlowMatrix(first.station_index, total, date, period)


def to_triplets(fm: FlowMatrix) -> list[tuple[str, str, int]]:
    """Sparse interchange form: nonzero cells in row-major station order."""
    out = []
    for i, origin in enumerate(fm.station_index):
        row = fm.counts[i]
        for j in np.nonzero(row)[0]:
            out.append((origin, fm.station_index[int(j)], int(row[j])))
    return out


def write_flow_csv(
    fm: FlowMatrix, path: str | Path, config_hash: str | None = None
) -> Path:
    """Triplet CSV plus a ``.meta.json`` sidecar next to it."""
    path = Path(path)
    write_csv(path, ["origin", "destination", "count"], to_triplets(fm), config_hash)
    write_json(
        path.with_suffix(".meta.json"),
        {
            "date": fm.date,
            "period": fm.period,
            "station_count": fm.n_stations,
            "total_trips": fm.total_trips,
        },
        config_hash=config_hash,
    )
    return path


def read_flow_csv(path: str | Path, stations: Sequence[str]) -> FlowMatrix:
    path = Path(path)
    header, rows = read_csv(path)
    if header != ["origin", "destination", "count"]:
        raise ValidationError(f"{path}: bad flow header {header}")
    meta = read_json(path.with_suffix(".meta.json"))
    index = {s: i for i, s in enumerate(stations)}
    counts = np.zeros((len(stations), len(stations)), dtype=np.int64)
    for origin, dest, count in rows:
        if origin not in index or dest not in index:
            raise ValidationError(f"{path}: unknown station in row {(origin, dest)}")
        counts[index[origin], index[dest]] = int(count)
    return FlowMatrix(tuple(stations), counts, meta["date"], meta["period"])


STATION_HEADER = ["station_id", "name", "lat", "lon", "division_group"]


def load_stations_csv(path: str | Path) -> list[Station]:
    header, rows = read_csv(path)
    if header != STATION_HEADER:
        raise ValidationError(f"{path}: expected header {STATION_HEADER}, got {header}")
    stations = []
    for row in rows:
        if len(row) != 5:
            raise ValidationError(f"{path}: bad station row {row!r}")
        stations.append(Station(row[0], row[1], float(row[2]), float(row[3]), row[4]))
    ids = [s.station_id for s in stations]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate station ids")
    return stations


def write_stations_csv(
    path: str | Path, stations: Iterable[Station], config_hash: str | None = None
) -> Path:
    rows = (
        (s.station_id, s.name, s.lat, s.lon, s.division_group) for s in stations
    )
    return write_csv(path, STATION_HEADER, rows, config_hash)
