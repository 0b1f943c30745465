"""Flow-matrix construction and aggregation."""

from datetime import datetime

import numpy as np
import pytest

from transitflow.errors import ValidationError
from transitflow.flowgraph import (
    FlowMatrix,
    aggregate,
    build_flow_matrix,
    load_stations_csv,
    read_flow_csv,
    to_triplets,
    write_flow_csv,
    write_stations_csv,
    Station,
)
from transitflow.ingest import PeriodTable, TripRecord

STATIONS = ["A", "B", "C"]
TABLE = PeriodTable.default()


def trip(o, d, start, end, day="2015-04-07", card="X"):
    return TripRecord(
        card, o, d,
        datetime.fromisoformat(f"{day}T{start}"),
        datetime.fromisoformat(f"{day}T{end}"),
    )


class TestBuild:
    def test_direct_count(self):
        trips = [trip("A", "B", "08:00", "08:30") for _ in range(3)]
        fm = build_flow_matrix(trips, "2015-04-07", "Morning", TABLE, STATIONS)
        assert fm.counts[0, 1] == 3
        assert fm.total_trips == 3

    def test_no_trips_gives_zero_matrix(self):
        fm = build_flow_matrix([], "2015-04-07", "Morning", TABLE, STATIONS)
        assert fm.counts.sum() == 0

    def test_period_filter(self):
        trips = [
            trip("A", "B", "08:00", "08:30"),
            trip("B", "A", "18:00", "18:30"),
        ]
        fm = build_flow_matrix(trips, "2015-04-07", "Morning", TABLE, STATIONS)
        assert fm.counts[0, 1] == 1
        assert fm.counts[1, 0] == 0

    def test_sum_equals_filtered_trip_count(self):
        trips = [
            trip("A", "B", "08:00", "08:30"),
            trip("B", "C", "08:10", "08:40"),
            trip("C", "A", "09:50", "10:10"),  # spans boundary: excluded
            trip("A", "C", "12:00", "12:20"),
        ]
        fm = build_flow_matrix(trips, "2015-04-07", "Morning", TABLE, STATIONS)
        assert fm.total_trips == 2

    def test_day_matrix_counts_everything_on_the_date(self):
        trips = [
            trip("A", "B", "08:00", "08:30"),
            trip("B", "A", "18:00", "18:30"),
            trip("A", "B", "03:00", "03:20"),  # no period, still in the day
            trip("A", "B", "08:00", "08:30", day="2015-04-08"),
        ]
        fm = build_flow_matrix(trips, "2015-04-07", "day", TABLE, STATIONS)
        assert fm.total_trips == 3

    def test_unknown_station_named_in_error(self):
        with pytest.raises(ValidationError, match="ZZ"):
            build_flow_matrix(
                [trip("A", "ZZ", "08:00", "08:30")],
                "2015-04-07",
                "Morning",
                TABLE,
                STATIONS,
            )

    def test_empty_station_list_rejected(self):
        with pytest.raises(ValidationError):
            build_flow_matrix([], "2015-04-07", "Morning", TABLE, [])

    def test_zero_flow_stations_still_present(self):
        fm = build_flow_matrix(
            [trip("A", "B", "08:00", "08:30")], "2015-04-07", "Morning", TABLE, STATIONS
        )
        assert fm.station_index == ("A", "B", "C")


class TestAggregate:
    def make(self, cells, date="2015-04-07", period="Morning"):
        counts = np.zeros((3, 3), dtype=np.int64)
        for (i, j), v in cells.items():
            counts[i, j] = v
        return FlowMatrix(tuple(STATIONS), counts, date, period)

    def test_additive_identity(self):
        fm = self.make({(0, 1): 2})
        zero = self.make({})
        out = aggregate([fm, zero])
        assert np.array_equal(out.counts, fm.counts)

    def test_disjoint_cells(self):
        out = aggregate([self.make({(0, 1): 1}), self.make({(1, 2): 1})])
        assert out.counts[0, 1] == 1 and out.counts[1, 2] == 1

    def test_four_period_day_matches_direct_recount(self):
        trips = [
            trip("A", "B", "08:00", "08:30"),
            trip("B", "C", "12:00", "12:30"),
            trip("C", "A", "18:00", "18:30"),
            trip("A", "C", "22:00", "22:30"),
            trip("B", "A", "08:15", "08:45"),
        ]
        per_period = [
            build_flow_matrix(trips, "2015-04-07", p, TABLE, STATIONS)
            for p in TABLE.names
        ]
        day = aggregate(per_period)
        direct = build_flow_matrix(trips, "2015-04-07", "day", TABLE, STATIONS)
        assert np.array_equal(day.counts, direct.counts)
        assert day.period == "day"
        assert day.date == "2015-04-07"

    def test_associative_commutative(self):
        mats = [self.make({(0, 1): i + 1, (2, 0): 2 * i}) for i in range(3)]
        a = aggregate([aggregate(mats[:2]), mats[2]])
        b = aggregate([mats[2], aggregate(mats[1::-1])])
        assert np.array_equal(a.counts, b.counts)

    def test_station_mismatch_rejected(self):
        other = FlowMatrix(("A", "B"), np.zeros((2, 2), dtype=np.int64), "x", "y")
        with pytest.raises(ValidationError):
            aggregate([self.make({}), other])

    def test_dates_collapse_to_aggregate(self):
        out = aggregate(
            [self.make({}, date="2015-04-07"), self.make({}, date="2015-04-08")]
        )
        assert out.date == "aggregate"


class TestValidation:
    def test_diagonal_must_be_zero(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[1, 1] = 1
        with pytest.raises(ValidationError, match="diagonal"):
            FlowMatrix(tuple(STATIONS), counts, "d", "p")

    def test_negative_counts_rejected(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[0, 1] = -1
        with pytest.raises(ValidationError):
            FlowMatrix(tuple(STATIONS), counts, "d", "p")

    def test_duplicate_stations_rejected(self):
        with pytest.raises(ValidationError):
            FlowMatrix(("A", "A"), np.zeros((2, 2), dtype=np.int64), "d", "p")


class TestFiles:
    def test_flow_csv_roundtrip(self, tmp_path):
        counts = np.array([[0, 2, 0], [1, 0, 0], [0, 4, 0]], dtype=np.int64)
        fm = FlowMatrix(tuple(STATIONS), counts, "2015-04-07", "Morning")
        path = tmp_path / "flow.csv"
        write_flow_csv(fm, path)
        loaded = read_flow_csv(path, STATIONS)
        assert np.array_equal(loaded.counts, counts)
        assert loaded.date == "2015-04-07"
        assert loaded.period == "Morning"
        assert to_triplets(fm) == [("A", "B", 2), ("B", "A", 1), ("C", "B", 4)]

    def test_stations_csv_roundtrip(self, tmp_path):
        stations = [
            Station("A", "Alpha", 31.2, 121.4, "Centre"),
            Station("B", "Beta", 31.3, 121.5, "Outer"),
        ]
        path = tmp_path / "stations.csv"
        write_stations_csv(path, stations)
        assert load_stations_csv(path) == stations
