"""Seeded synthetic generators with ground truth for every stage.

Planted-partition flow networks, trip populations with a prescribed
activity-pattern mixture, temporal series from known parameters, and a
whole synthetic city (stations, profiles, topics, emotions, calendar)
used by the pipeline fixtures.  Every generator is deterministic given
(seed, spec).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Mapping, Sequence

import numpy as np

from .community import Partition
from .errors import ValidationError
from .flowgraph import FlowMatrix, Station
from .ingest import PeriodTable, TripRecord
from .ioutil import derive_seed
from .spatial import StationProfile
from .temporal import (
    DEFAULT_BIN_MINUTES,
    DEFAULT_WINDOW_START,
    TemporalParams,
    VolumeSeries,
    simulate_volume_series,
)


@dataclass(frozen=True)
class NetworkSpec:
    sizes: tuple[int, ...] = (10, 10)
    within_weight: float = 5.0
    cross_weight: float = 1.0

    def __post_init__(self) -> None:
        if not self.sizes or any(s < 2 for s in self.sizes):
            raise ValidationError("community sizes must all be >= 2")
        if self.within_weight < 0 or self.cross_weight < 0:
            raise ValidationError("weights must be nonnegative")


@dataclass(frozen=True)
class PopulationSpec:
    n_cards: int = 1000
    mixture: Mapping[str, float] = field(
        default_factory=lambda: {"N2E2": 0.85, "N3E2": 0.15}
    )
    trip_date: str = "2015-04-07"

    def __post_init__(self) -> None:
        total = sum(self.mixture.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"pattern mixture sums to {total}, not 1")
        unknown = set(self.mixture) - set(PATTERN_TEMPLATES)
        if unknown:
            raise ValidationError(f"no template for pattern codes {sorted(unknown)}")


@dataclass(frozen=True)
class TemporalSpec:
    """Parameter ranges for the volume-recurrence generators.

    The defaults keep every simulated series strictly positive over 42
    bins while leaving the damped oscillation strong enough that the
    discomfort weight stays identifiable under observation noise: the
    start dips well below the driven path (small p0 against a large c)
    and the feedback mu * n_total sits close to 1 so the transient
    persists across the window.
    """

    tau_range: tuple[float, float] = (0.002, 0.008)
    mu_scale_range: tuple[float, float] = (0.85, 0.97)  # mu = scale / n_total
    c_range: tuple[float, float] = (0.3, 0.45)
    p0_range: tuple[float, float] = (0.01, 0.05)
    n_total_range: tuple[int, int] = (500, 5000)
    noise_sigma: float = 0.0
    horizon_bins: int = 42


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    network: NetworkSpec = field(default_factory=NetworkSpec)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    temporal: TemporalSpec = field(default_factory=TemporalSpec)


# ---------------------------------------------------------------------------
# planted-partition networks


def generate_planted_network(
    sizes: Sequence[int],
    within_weight: float,
    cross_weight: float,
    seed: int,
    station_prefix: str = "S",
) -> tuple[FlowMatrix, Partition]:
    """Directed Poisson-weighted network with planted communities.

    Arc weights are Poisson with mean ``within_weight`` inside a block
    and ``cross_weight`` across blocks, so counts stay integral.
    """
    spec = NetworkSpec(tuple(int(s) for s in sizes), within_weight, cross_weight)
    rng = np.random.default_rng(seed)
    n = sum(spec.sizes)
    ids = tuple(f"{station_prefix}{i:03d}" for i in range(n))
    block = np.repeat(np.arange(len(spec.sizes)), spec.sizes)
    means = np.where(
        block[:, None] == block[None, :], spec.within_weight, spec.cross_weight
    ).astype(float)
    np.fill_diagonal(means, 0.0)
    counts = rng.poisson(means)
    np.fill_diagonal(counts, 0)
    flow = FlowMatrix(ids, counts.astype(np.int64), "aggregate", "day")
    truth = Partition.from_array(ids, block)
    return flow, truth


def sample_trips_from_network(
    flow: FlowMatrix,
    trip_date: date,
    period_name: str,
    table: PeriodTable,
    seed: int,
    card_prefix: str = "P",
) -> list[TripRecord]:
    """Materialize one (date, period) cell: each unit of flow weight
    becomes a trip whose endpoints both fall inside the period."""
    period = next(p for p in table.periods if p.name == period_name)
    rng = np.random.default_rng(seed)
    start_min = period.start.hour * 60 + period.start.minute
    end_min = period.end.hour * 60 + period.end.minute
    trips: list[TripRecord] = []
    serial = 0
    for i, origin in enumerate(flow.station_index):
        for j, dest in enumerate(flow.station_index):
            c = int(flow.counts[i, j])
            for _ in range(c):
                duration = int(rng.integers(8, 25))
                latest = end_min - duration
                start = int(rng.integers(start_min, max(start_min, latest) + 1))
                t0 = datetime.combine(trip_date, time(start // 60, start % 60))
                t1 = t0 + timedelta(minutes=duration)
                trips.append(
                    TripRecord(f"{card_prefix}{serial:07d}", origin, dest, t0, t1)
                )
                serial += 1
    return trips


# ---------------------------------------------------------------------------
# trip populations with known activity patterns

# each template is a list of (origin role, destination role, slot);
# slots: am = before 10:00, mid = midday, pm/pm2/pm3 = evening sequence
PATTERN_TEMPLATES: dict[str, list[tuple[str, str, str]]] = {
    "N2E2": [("H", "W", "am"), ("W", "H", "pm")],
    "N3E2": [("H", "W", "am"), ("X1", "H", "pm")],
    "N3E3": [("H", "W", "am"), ("W", "X1", "pm"), ("X1", "H", "pm2")],
    "N4E3": [("H", "W", "am"), ("W", "X1", "pm"), ("X2", "H", "pm2")],
    "N4E4": [
        ("H", "W", "am"),
        ("W", "X1", "pm"),
        ("X1", "X2", "pm2"),
        ("X2", "H", "pm3"),
    ],
    "N2E4": [("H", "W", "am"), ("W", "H", "mid"), ("H", "W", "mid2"), ("W", "H", "pm")],
}

_SLOT_WINDOWS = {
    "am": (6 * 60, 9 * 60 + 30),
    "mid": (11 * 60, 12 * 60 + 30),
    "mid2": (13 * 60 + 30, 15 * 60),
    "pm": (17 * 60 + 10, 19 * 60),
    "pm2": (19 * 60 + 40, 21 * 60),
    "pm3": (21 * 60 + 40, 22 * 60 + 30),
}


def generate_trip_population(
    spec: PopulationSpec,
    seed: int,
    station_pool: Sequence[str] | None = None,
) -> tuple[list[TripRecord], dict[str, str]]:
    """Cards with daily chains drawn from the pattern mixture.

    Returns the flat trip list plus the true pattern code per card; the
    chains honor the worker-selection rule (first trip before 10:00, a
    later trip after 17:00).
    """
    rng = np.random.default_rng(seed)
    pool = list(station_pool) if station_pool else [f"S{i:03d}" for i in range(12)]
    if len(pool) < 4:
        raise ValidationError("station pool needs at least 4 stations")
    codes = sorted(spec.mixture)
    probs = np.array([spec.mixture[c] for c in codes])
    day = date.fromisoformat(spec.trip_date)

    trips: list[TripRecord] = []
    truth: dict[str, str] = {}
    for c in range(spec.n_cards):
        card = f"C{c:06d}"
        code = codes[int(rng.choice(len(codes), p=probs))]
        truth[card] = code
        chosen = rng.choice(len(pool), size=4, replace=False)
        roles = {
            "H": pool[chosen[0]],
            "W": pool[chosen[1]],
            "X1": pool[chosen[2]],
            "X2": pool[chosen[3]],
        }
        for origin_role, dest_role, slot in PATTERN_TEMPLATES[code]:
            lo, hi = _SLOT_WINDOWS[slot]
            start = int(rng.integers(lo, hi))
            duration = int(rng.integers(15, 35))
            t0 = datetime.combine(day, time(start // 60, start % 60))
            t1 = t0 + timedelta(minutes=duration)
            trips.append(
                TripRecord(card, roles[origin_role], roles[dest_role], t0, t1)
            )
    trips.sort(key=lambda t: (t.card_id, t.t_start))
    return trips, truth


# ---------------------------------------------------------------------------
# temporal observations


def draw_temporal_params(spec: TemporalSpec, seed: int) -> TemporalParams:
    rng = np.random.default_rng(seed)
    n_total = int(rng.integers(spec.n_total_range[0], spec.n_total_range[1] + 1))
    mu = rng.uniform(*spec.mu_scale_range) / n_total
    return TemporalParams(
        tau=float(rng.uniform(*spec.tau_range)),
        mu=float(mu),
        c=float(rng.uniform(*spec.c_range)),
        p0=float(rng.uniform(*spec.p0_range)),
        n_total=n_total,
    )


def generate_temporal_observations(
    params_by_origin: Mapping[str, TemporalParams],
    noise_sigma: float,
    horizon_bins: int,
    seed: int,
) -> dict[str, VolumeSeries]:
    """Simulated series plus additive Gaussian noise, truncated at zero."""
    out: dict[str, VolumeSeries] = {}
    for origin in sorted(params_by_origin):
        params = params_by_origin[origin]
        series = simulate_volume_series(params, horizon_bins, origin=origin)
        if noise_sigma > 0:
            rng = np.random.default_rng(derive_seed(seed, "noise", origin))
            noisy = series.values + rng.normal(0.0, noise_sigma, size=len(series.values))
            truncated = int((noisy < 0).sum())
            series = VolumeSeries(
                origin=origin,
                values=np.maximum(noisy, 0.0),
                t_start=series.t_start,
                bin_width=series.bin_width,
                n_clamped=series.n_clamped + truncated,
            )
        out[origin] = series
    return out


# ---------------------------------------------------------------------------
# synthetic city (stations, profiles, topics, emotions)


def generate_city(
    n_stations: int,
    n_topics: int,
    seed: int,
    centre_fraction: float = 0.5,
) -> tuple[list[Station], list[StationProfile]]:
    """Random station layout with Centre/Outer division groups and
    heterogeneous facility counts and topic popularity."""
    if n_stations < 4:
        raise ValidationError("need at least 4 stations")
    rng = np.random.default_rng(seed)
    n_centre = max(2, int(round(centre_fraction * n_stations)))
    stations: list[Station] = []
    profiles: list[StationProfile] = []
    for i in range(n_stations):
        sid = f"S{i:03d}"
        centre = i < n_centre
        radius = rng.uniform(0.0, 0.04) if centre else rng.uniform(0.05, 0.12)
        angle = rng.uniform(0, 2 * np.pi)
        lat = 31.23 + radius * np.sin(angle)
        lon = 121.47 + radius * np.cos(angle)
        group = "Centre" if centre else "Outer"
        stations.append(Station(sid, f"Station {i}", float(lat), float(lon), group))
        base = 3.0 if centre else 1.0
        popularity = rng.gamma(shape=2.0, scale=base, size=n_topics)
        facilities = {
            "entertainment": int(rng.integers(5, 400)),
            "shopping": int(rng.integers(5, 600)),
            "food": int(rng.integers(10, 2500)),
        }
        profiles.append(
            StationProfile(
                station_id=sid,
                lat=float(lat),
                lon=float(lon),
                division_group=group,
                facility_counts=facilities,
                topic_popularity=popularity,
                opportunities=float(rng.uniform(50.0, 150.0)),
            )
        )
    return stations, profiles


def generate_topic_files(
    n_topics: int, seed: int, words_per_topic: int = 6
) -> tuple[list[tuple[str, int, float]], list[tuple[str, float]]]:
    """Small topic table and emotion dictionary rows for fixtures."""
    rng = np.random.default_rng(seed)
    topic_rows: list[tuple[str, int, float]] = []
    emotion_rows: list[tuple[str, float]] = []
    for t in range(n_topics):
        for w in range(words_per_topic):
            word = f"w{t:02d}_{w:02d}"
            topic_rows.append((word, t, float(rng.uniform(0.05, 0.6))))
            emotion_rows.append((word, float(rng.uniform(-1.0, 3.0))))
    return topic_rows, emotion_rows


def sample_od_trips(
    probabilities: np.ndarray,
    station_ids: Sequence[str],
    n_trips: int,
    trip_date: date,
    period_name: str,
    table: PeriodTable,
    seed: int,
    origin_weights: np.ndarray | None = None,
) -> list[TripRecord]:
    """Draw trips with origins from ``origin_weights`` and destinations
    from each origin's probability row."""
    rng = np.random.default_rng(seed)
    n = len(station_ids)
    if origin_weights is None:
        origin_weights = np.ones(n) / n
    origin_weights = np.asarray(origin_weights, dtype=float)
    origin_weights = origin_weights / origin_weights.sum()
    period = next(p for p in table.periods if p.name == period_name)
    start_min = period.start.hour * 60 + period.start.minute
    end_min = period.end.hour * 60 + period.end.minute
    origins = rng.choice(n, size=n_trips, p=origin_weights)
    trips: list[TripRecord] = []
    for serial, i in enumerate(origins):
        j = int(rng.choice(n, p=probabilities[i]))
        duration = int(rng.integers(8, 25))
        start = int(rng.integers(start_min, end_min - duration + 1))
        t0 = datetime.combine(trip_date, time(start // 60, start % 60))
        trips.append(
            TripRecord(
                f"Q{serial:07d}",
                station_ids[int(i)],
                station_ids[j],
                t0,
                t0 + timedelta(minutes=duration),
            )
        )
    return trips
