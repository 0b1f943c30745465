"""Synthetic generators: determinism and ground-truth contracts."""

import numpy as np
import pytest

from transitflow.activity import build_daily_chains, classify_pattern, label_chain, select_workers
from transitflow.community import contingency_correlation, louvain_partition
from transitflow.errors import ValidationError
from transitflow.ingest import PeriodTable, assign_period, pair_taps
from transitflow.synth import (
    NetworkSpec,
    PopulationSpec,
    generate_city,
    generate_planted_network,
    generate_trip_population,
    sample_trips_from_network,
)


class TestPlantedNetwork:
    def test_deterministic_given_seed(self):
        a, _ = generate_planted_network([5, 5], 4.0, 1.0, seed=3)
        b, _ = generate_planted_network([5, 5], 4.0, 1.0, seed=3)
        assert np.array_equal(a.counts, b.counts)

    def test_zero_cross_weight_gives_disjoint_blocks(self):
        flow, truth = generate_planted_network([5, 5], 5.0, 0.0, seed=1)
        found = louvain_partition(flow, 0)
        assert found == truth

    def test_two_block_recovery_quality(self):
        flow, truth = generate_planted_network([10, 10], 5.0, 1.0, seed=2)
        found = louvain_partition(flow, 0)
        assert contingency_correlation(found, truth) > 0.6

    def test_single_community_degenerates_to_one(self):
        flow, truth = generate_planted_network([8], 4.0, 0.0, seed=4)
        assert truth.n_communities == 1
        assert louvain_partition(flow, 0).n_communities == 1

    def test_degenerate_sizes_rejected(self):
        with pytest.raises(ValidationError):
            generate_planted_network([1, 5], 4.0, 1.0, seed=0)
        with pytest.raises(ValidationError):
            generate_planted_network([], 4.0, 1.0, seed=0)

    def test_zero_diagonal(self):
        flow, _ = generate_planted_network([4, 4], 6.0, 2.0, seed=5)
        assert np.all(np.diag(flow.counts) == 0)


class TestTripSampling:
    def test_each_weight_unit_becomes_one_trip_in_period(self):
        flow, _ = generate_planted_network([3, 3], 3.0, 1.0, seed=6)
        table = PeriodTable.default()
        trips = sample_trips_from_network(
            flow, __import__("datetime").date(2015, 4, 7), "Morning", table, seed=0
        )
        assert len(trips) == flow.total_trips
        for t in trips:
            assert assign_period(t, table) == "Morning"

    def test_trips_pass_ingest_validation(self):
        flow, _ = generate_planted_network([3, 3], 3.0, 1.0, seed=6)
        table = PeriodTable.default()
        trips = sample_trips_from_network(
            flow, __import__("datetime").date(2015, 4, 7), "Evening", table, seed=1
        )
        for t in trips:
            assert t.origin != t.destination
            assert t.t_start < t.t_end


class TestPopulation:
    def test_pure_mixture_all_one_code(self):
        spec = PopulationSpec(n_cards=50, mixture={"N2E2": 1.0})
        trips, truth = generate_trip_population(spec, seed=0)
        chains, _ = build_daily_chains(trips)
        workers = select_workers(chains)
        assert len(workers) == 50
        for c in workers:
            assert classify_pattern(label_chain(c)).code == "N2E2"
        assert set(truth.values()) == {"N2E2"}

    def test_six_code_family_roundtrip(self):
        mixture = {
            "N2E2": 0.5,
            "N3E2": 0.2,
            "N3E3": 0.1,
            "N4E3": 0.1,
            "N4E4": 0.05,
            "N2E4": 0.05,
        }
        spec = PopulationSpec(n_cards=600, mixture=mixture)
        trips, truth = generate_trip_population(spec, seed=1)
        chains, excluded = build_daily_chains(trips)
        assert excluded == 0
        workers = select_workers(chains)
        assert len(workers) == 600
        seen = set()
        for c in workers:
            code = classify_pattern(label_chain(c)).code
            assert truth[c.card_id] == code
            seen.add(code)
        assert seen == set(mixture)

    def test_mixture_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            PopulationSpec(n_cards=10, mixture={"N2E2": 0.5})

    def test_unknown_code_rejected(self):
        with pytest.raises(ValidationError):
            PopulationSpec(n_cards=10, mixture={"N9E9": 1.0})

    def test_deterministic(self):
        spec = PopulationSpec(n_cards=20, mixture={"N2E2": 0.5, "N3E2": 0.5})
        a, ta = generate_trip_population(spec, seed=9)
        b, tb = generate_trip_population(spec, seed=9)
        assert a == b and ta == tb


class TestCity:
    def test_city_deterministic_and_grouped(self):
        s1, p1 = generate_city(12, 3, seed=0)
        s2, p2 = generate_city(12, 3, seed=0)
        assert [x.station_id for x in s1] == [x.station_id for x in s2]
        assert all(st.division_group in ("Centre", "Outer") for st in s1)
        assert {len(p.topic_popularity) for p in p1} == {3}
        assert np.allclose(
            [p.opportunities for p in p1], [p.opportunities for p in p2]
        )

    def test_minimum_size(self):
        with pytest.raises(ValidationError):
            generate_city(2, 3, seed=0)
