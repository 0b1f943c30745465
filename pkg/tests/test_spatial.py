"""Attraction model, gravity baseline and correlation evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transitflow.errors import ComputationError, ValidationError
from transitflow.flowgraph import FlowMatrix
from transitflow.spatial import (
    CorrelationResult,
    SpatialParams,
    StationProfile,
    TopicEmotion,
    attraction,
    destination_distribution,
    distance_matrix,
    evaluate_flow_correlation,
    gravity_baseline,
    haversine_km,
    normalize_emotion,
    observed_shares,
    predicted_flow_matrix,
    topic_popularity,
    topic_emotions,
)


def profile(sid, popularity, opportunities=1.0, group="Centre", lat=31.2, lon=121.4):
    return StationProfile(
        station_id=sid,
        lat=lat,
        lon=lon,
        division_group=group,
        facility_counts={"entertainment": 1, "shopping": 1, "food": 1},
        topic_popularity=np.asarray(popularity, dtype=float),
        opportunities=opportunities,
    )


class TestTopicPopularity:
    def test_empty_word_set(self):
        x, misses = topic_popularity({"w": np.array([0.3, 0.1])}, [])
        assert np.allclose(x, [0.0, 0.0]) and misses == 0

    def test_single_word(self):
        x, _ = topic_popularity({"w": np.array([0.4])}, ["w"])
        assert x[0] == pytest.approx(0.4)

    def test_multiplicity_summed(self):
        table = {"w1": np.array([0.3]), "w2": np.array([0.1])}
        x, misses = topic_popularity(table, ["w1", "w1", "w2"])
        assert x[0] == pytest.approx(0.7)
        assert misses == 0

    def test_missing_words_counted(self):
        x, misses = topic_popularity({"w": np.array([0.2])}, ["nope", "w", "nope"])
        assert x[0] == pytest.approx(0.2)
        assert misses == 2

    def test_probability_range_checked(self):
        with pytest.raises(ValidationError):
            topic_popularity({"w": np.array([1.4])}, ["w"])


class TestNormalizeEmotion:
    def test_lower_bound(self):
        assert normalize_emotion(-2.0, -2.0, 6.0) == 0.0

    def test_upper_bound(self):
        assert normalize_emotion(6.0, -2.0, 6.0) == 1.0

    def test_midpoint(self):
        assert normalize_emotion(2.0, -2.0, 6.0) == 0.5

    def test_clamping(self):
        assert normalize_emotion(99.0, 0.0, 1.0) == 1.0
        assert normalize_emotion(-99.0, 0.0, 1.0) == 0.0

    def test_bad_bounds(self):
        with pytest.raises(ValidationError):
            normalize_emotion(0.0, 1.0, 1.0)

    def test_topic_emotion_thetas(self):
        te = TopicEmotion(strengths=np.array([0.0, 5.0, 10.0]), lb=0.0, ub=10.0)
        assert np.allclose(te.thetas(), [0.0, 0.5, 1.0])


class TestAttraction:
    def test_sigmoid_at_zero(self):
        p = profile("i", [0.0], opportunities=1.0)
        params = SpatialParams(theta=[0.0], theta_d=0.0)
        assert attraction(p, params, 5.0) == pytest.approx(0.5)

    def test_zero_opportunities(self):
        p = profile("i", [2.0], opportunities=0.0)
        params = SpatialParams(theta=[1.0], theta_d=0.5)
        assert attraction(p, params, 2.0) == 0.0

    def test_reference_sigmoid_value(self):
        # theta.x + theta_d * d + eps = 2 + 1 - 1 = 2 with raw distance sign
        p = profile("i", [2.0], opportunities=1.0)
        params = SpatialParams(theta=[1.0], theta_d=0.5, epsilon=-1.0, distance_sign=1.0)
        assert attraction(p, params, 2.0) == pytest.approx(0.8807970779778823, abs=1e-12)

    def test_monotone_in_popularity(self):
        params = SpatialParams(theta=[0.7], theta_d=0.2)
        a1 = attraction(profile("i", [1.0]), params, 3.0)
        a2 = attraction(profile("i", [1.0 + 1e-6]), params, 3.0)
        assert a2 > a1

    def test_distance_sign_controls_monotonicity(self):
        p = profile("i", [1.0])
        decaying = SpatialParams(theta=[0.5], theta_d=0.5, distance_sign=-1.0)
        raw = SpatialParams(theta=[0.5], theta_d=0.5, distance_sign=1.0)
        assert attraction(p, decaying, 2.0 + 1e-6) < attraction(p, decaying, 2.0)
        assert attraction(p, raw, 2.0 + 1e-6) > attraction(p, raw, 2.0)

    def test_bounded_by_opportunities(self):
        p = profile("i", [5.0], opportunities=7.0)
        params = SpatialParams(theta=[1.0], theta_d=0.0)
        a = attraction(p, params, 0.0)
        assert 0.0 < a < 7.0

    def test_theta_validation(self):
        with pytest.raises(ValidationError):
            SpatialParams(theta=[1.5], theta_d=0.0)
        with pytest.raises(ValidationError):
            SpatialParams(theta=[0.5], theta_d=2.0)


class TestDestinationDistribution:
    def test_identical_destinations_uniform(self):
        profiles = [profile(f"s{i}", [1.0]) for i in range(4)]
        distances = {f"s{i}": 2.0 for i in range(4)}
        params = SpatialParams(theta=[0.5], theta_d=0.3)
        ids, probs = destination_distribution("s0", profiles, params, distances)
        assert ids == ["s1", "s2", "s3"]
        assert np.allclose(probs, 1.0 / 3.0)

    def test_zero_opportunity_gets_zero_probability(self):
        profiles = [
            profile("s0", [1.0]),
            profile("s1", [1.0], opportunities=0.0),
            profile("s2", [1.0]),
        ]
        distances = {"s1": 1.0, "s2": 1.0}
        params = SpatialParams(theta=[0.5], theta_d=0.3)
        ids, probs = destination_distribution("s0", profiles, params, distances)
        assert probs[ids.index("s1")] == 0.0

    def test_three_station_hand_normalization(self):
        from scipy.special import expit

        profiles = [
            profile("s0", [0.0]),
            profile("s1", [1.0], opportunities=2.0),
            profile("s2", [3.0], opportunities=1.0),
        ]
        distances = {"s1": 1.0, "s2": 2.0}
        params = SpatialParams(theta=[0.5], theta_d=0.25, epsilon=0.1, distance_sign=-1.0)
        a1 = 2.0 * expit(0.5 * 1.0 - 0.25 * 1.0 + 0.1)
        a2 = 1.0 * expit(0.5 * 3.0 - 0.25 * 2.0 + 0.1)
        ids, probs = destination_distribution("s0", profiles, params, distances)
        assert probs[0] == pytest.approx(a1 / (a1 + a2), abs=1e-12)
        assert probs[1] == pytest.approx(a2 / (a1 + a2), abs=1e-12)

    def test_all_zero_opportunities_rejected(self):
        profiles = [profile(f"s{i}", [1.0], opportunities=0.0) for i in range(3)]
        distances = {"s1": 1.0, "s2": 1.0}
        params = SpatialParams(theta=[0.5], theta_d=0.3)
        with pytest.raises(ComputationError, match="no opportunities"):
            destination_distribution("s0", profiles, params, distances)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_normalization_within_1e_12(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        profiles = [
            profile(f"s{i}", rng.uniform(0, 3, 3), opportunities=float(rng.uniform(0.1, 5)))
            for i in range(n)
        ]
        distances = {f"s{i}": float(rng.uniform(0.1, 20)) for i in range(n)}
        params = SpatialParams(theta=rng.uniform(0, 1, 3), theta_d=float(rng.uniform(0, 1)))
        _, probs = destination_distribution("s0", profiles, params, distances)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs > 0)


class TestGravity:
    def test_equal_masses_equal_distances_uniform(self):
        d = np.ones((3, 3)) - np.eye(3)
        out = gravity_baseline([2.0, 2.0, 2.0], d, beta=2.0)
        assert np.allclose(out[0], [0.0, 0.5, 0.5])

    def test_mass_scale_invariance(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(1, 5, (4, 4))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        masses = rng.uniform(0.5, 3.0, 4)
        a = gravity_baseline(masses, d, beta=1.5)
        b = gravity_baseline(2.0 * masses, d, beta=1.5)
        assert np.allclose(a, b)

    def test_hand_case(self):
        d = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        out = gravity_baseline([1.0, 2.0, 2.0], d, beta=2.0)
        assert np.allclose(out[0], [0.0, 0.5, 0.5])

    def test_zero_distance_rejected(self):
        d = np.zeros((2, 2))
        with pytest.raises(ValidationError, match="zero distance"):
            gravity_baseline([1.0, 1.0], d, beta=2.0)

    def test_rows_normalized(self):
        rng = np.random.default_rng(1)
        d = rng.uniform(0.5, 9, (5, 5))
        np.fill_diagonal(d, 0.0)
        out = gravity_baseline(rng.uniform(0.1, 4, 5), d, beta=2.0)
        assert np.allclose(out.sum(axis=1), 1.0)
        assert np.allclose(np.diag(out), 0.0)


def flow_with_counts(counts):
    ids = tuple(f"s{i}" for i in range(counts.shape[0]))
    return FlowMatrix(ids, counts.astype(np.int64), "2015-04-07", "Evening")


class TestEvaluation:
    def groups(self, n, centre=None):
        centre = centre if centre is not None else n
        return {f"s{i}": ("Centre" if i < centre else "Outer") for i in range(n)}

    def test_perfect_prediction(self):
        rng = np.random.default_rng(2)
        counts = rng.integers(1, 50, (4, 4))
        np.fill_diagonal(counts, 0)
        fm = flow_with_counts(counts)
        predicted = observed_shares(fm)
        predicted = np.nan_to_num(predicted)
        res = evaluate_flow_correlation(predicted, fm, "Both", self.groups(4))
        assert res.r == pytest.approx(1.0, abs=1e-12)
        assert res.ci_low == res.r and res.ci_high == res.r

    def test_perfect_anticorrelation(self):
        rng = np.random.default_rng(3)
        counts = rng.integers(1, 50, (4, 4))
        np.fill_diagonal(counts, 0)
        fm = flow_with_counts(counts)
        predicted = 1.0 - np.nan_to_num(observed_shares(fm))
        res = evaluate_flow_correlation(predicted, fm, "Both", self.groups(4))
        assert res.r == pytest.approx(-1.0, abs=1e-12)

    def test_fisher_interval_matches_hand_formula(self):
        # r = 0.35 at n = 2000 pairs: z +- 1.96/sqrt(1997), mapped back by tanh
        z = np.arctanh(0.35)
        half = 1.96 / np.sqrt(2000 - 3)
        lo, hi = np.tanh(z - half), np.tanh(z + half)
        assert lo == pytest.approx(0.311, abs=5e-4)
        assert hi == pytest.approx(0.388, abs=5e-4)
        rng = np.random.default_rng(4)
        # build a synthetic pair set with r close to 0.35 and n >= 2000
        n_side = 46  # 46*45 = 2070 pairs
        x = rng.normal(0, 1.0, (n_side, n_side))
        y = 0.35 * x + np.sqrt(1 - 0.35**2) * rng.normal(0, 1.0, (n_side, n_side))
        counts = np.clip((y - y.min()) * 20, 1, None).astype(np.int64)
        np.fill_diagonal(counts, 0)
        fm = flow_with_counts(counts)
        shares = np.nan_to_num(observed_shares(fm))
        predicted = np.clip(x - x.min(), 0.01, None)
        np.fill_diagonal(predicted, 0.0)
        res = evaluate_flow_correlation(predicted, fm, "Both", self.groups(n_side))
        width_expected = 2 * 1.96 / np.sqrt(res.n_pairs - 3)
        width_seen = np.arctanh(res.ci_high) - np.arctanh(res.ci_low)
        assert width_seen == pytest.approx(width_expected, rel=1e-9)

    def test_zero_variance_rejected(self):
        counts = np.ones((3, 3), dtype=np.int64)
        np.fill_diagonal(counts, 0)
        fm = flow_with_counts(counts)
        predicted = np.full((3, 3), 0.5)
        with pytest.raises(ComputationError, match="degenerate"):
            evaluate_flow_correlation(predicted, fm, "Both", self.groups(3))

    def test_group_filter_uses_both_endpoints(self):
        rng = np.random.default_rng(5)
        counts = rng.integers(1, 30, (6, 6))
        np.fill_diagonal(counts, 0)
        fm = flow_with_counts(counts)
        predicted = rng.uniform(0.01, 1, (6, 6))
        np.fill_diagonal(predicted, 0.0)
        groups = self.groups(6, centre=3)
        res_centre = evaluate_flow_correlation(predicted, fm, "Centre", groups)
        assert res_centre.n_pairs == 3 * 2  # 3 centre stations, ordered pairs
        res_both = evaluate_flow_correlation(predicted, fm, "Both", groups)
        assert res_both.n_pairs == 6 * 5

    def test_too_few_pairs_rejected(self):
        counts = np.array([[0, 3], [2, 0]], dtype=np.int64)
        fm = flow_with_counts(counts)
        with pytest.raises(ValidationError, match="OD pairs"):
            evaluate_flow_correlation(np.ones((2, 2)), fm, "Both", self.groups(2))

    def test_stronger_centre_signal_reproduces_group_ordering(self):
        # heterogeneous popularity in the Centre group, near-uniform in
        # the Outer group: under equal sampling noise the evaluation must
        # rank Centre above Outer
        rng = np.random.default_rng(7)
        n = 16
        profiles = []
        for i in range(n):
            centre = i < 8
            popularity = (
                rng.uniform(0.0, 6.0, 2) if centre else np.full(2, 1.0)
            )
            profiles.append(
                StationProfile(
                    station_id=f"s{i}",
                    lat=31.0 + 0.02 * i,
                    lon=121.0 + 0.015 * (i % 5),
                    division_group="Centre" if centre else "Outer",
                    facility_counts={"entertainment": 1, "shopping": 1, "food": 1},
                    topic_popularity=popularity,
                    opportunities=1.0,
                )
            )
        params = SpatialParams(theta=np.array([0.9, 0.7]), theta_d=0.05)
        probs = predicted_flow_matrix(profiles, params)
        counts = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            counts[i] = rng.multinomial(400, probs[i])
        np.fill_diagonal(counts, 0)
        fm = FlowMatrix(tuple(p.station_id for p in profiles), counts, "agg", "Evening")
        groups = {p.station_id: p.division_group for p in profiles}
        r_centre = evaluate_flow_correlation(probs, fm, "Centre", groups).r
        r_outer = evaluate_flow_correlation(probs, fm, "Outer", groups).r
        assert r_centre > r_outer


class TestGeometry:
    def test_haversine_equator_degree(self):
        # one degree of longitude at the equator is about 111.19 km
        assert haversine_km(0.0, 0.0, 0.0, 1.0) == pytest.approx(111.19, abs=0.1)

    def test_distance_matrix_symmetric_zero_diagonal(self):
        profs = [
            profile("a", [1.0], lat=31.1, lon=121.3),
            profile("b", [1.0], lat=31.4, lon=121.6),
            profile("c", [1.0], lat=31.2, lon=121.8),
        ]
        d = distance_matrix(profs)
        assert np.allclose(d, d.T)
        assert np.allclose(np.diag(d), 0.0)
        assert np.all(d[~np.eye(3, dtype=bool)] > 0)

    def test_predicted_matrix_rows_normalized(self):
        rng = np.random.default_rng(6)
        profs = [
            profile(f"s{i}", rng.uniform(0, 2, 2), opportunities=1.0,
                    lat=31.0 + 0.1 * i, lon=121.0 + 0.05 * i)
            for i in range(5)
        ]
        params = SpatialParams(theta=[0.4, 0.6], theta_d=0.3)
        out = predicted_flow_matrix(profs, params)
        assert np.allclose(out.sum(axis=1), 1.0)
        assert np.allclose(np.diag(out), 0.0)


class TestTopicEmotions:
    def test_strengths_summed_per_topic(self):
        table = {
            "happy": np.array([0.5, 0.0]),
            "sad": np.array([0.0, 0.3]),
            "ok": np.array([0.2, 0.2]),
        }
        emotions = {"happy": 2.0, "sad": -1.0, "ok": 0.5}
        te = topic_emotions(table, emotions, lb=-1.0, ub=3.0)
        assert np.allclose(te.strengths, [2.5, -0.5])

    def test_default_bounds_from_range(self):
        table = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
        te = topic_emotions(table, {"a": 1.0, "b": 3.0})
        assert np.allclose(te.thetas(), [0.0, 1.0])


class TestFileFormats:
    def test_topic_table_loader(self, tmp_path):
        from transitflow.spatial import load_topic_table_csv

        path = tmp_path / "topics.csv"
        path.write_text(
            "word,topic_id,probability\nhappy,0,0.5\nhappy,1,0.2\nsad,1,0.3\n"
        )
        table = load_topic_table_csv(path)
        assert np.allclose(table["happy"], [0.5, 0.2])
        assert np.allclose(table["sad"], [0.0, 0.3])

    def test_emotion_loader(self, tmp_path):
        from transitflow.spatial import load_emotion_csv

        path = tmp_path / "emotions.csv"
        path.write_text("word,strength\nhappy,2.5\nsad,-1.0\n")
        assert load_emotion_csv(path) == {"happy": 2.5, "sad": -1.0}

    def test_profiles_roundtrip(self, tmp_path):
        from transitflow.spatial import load_profiles_csv, write_profiles_csv

        profiles = [
            profile("a", [0.5, 1.5], opportunities=3.0, group="Centre"),
            profile("b", [0.0, 2.0], opportunities=1.0, group="Outer"),
        ]
        path = write_profiles_csv(tmp_path / "profiles.csv", profiles)
        loaded = load_profiles_csv(path)
        assert [p.station_id for p in loaded] == ["a", "b"]
        assert np.allclose(loaded[0].topic_popularity, [0.5, 1.5])
        assert loaded[1].division_group == "Outer"

    def test_correlation_report_columns(self, tmp_path):
        from transitflow.ioutil import read_csv
        from transitflow.spatial import write_correlation_csv

        res = CorrelationResult(0.35, 0.31, 0.39, 2000)
        path = write_correlation_csv(
            [("attraction", "Centre", res)], tmp_path / "eval.csv"
        )
        header, rows = read_csv(path)
        assert header == ["model", "group", "r", "ci_low", "ci_high", "n"]
        assert rows[0][0] == "attraction" and rows[0][1] == "Centre"
