"""Destination-choice model: topic popularity, sigmoid attraction,
gravity baseline and correlation-based evaluation.

The attraction of a destination combines its per-topic popularity,
weighted by normalized topic emotion strengths, with a distance term
inside a sigmoid, scaled by the destination's opportunities.  Per-origin
normalization turns attractions into choice probabilities.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ComputationError, ValidationError
from .flowgraph import FlowMatrix
from .ioutil import read_csv, write_csv

EARTH_RADIUS_KM = 6371.0088
FACILITY_KINDS = ("entertainment", "shopping", "food")
GROUPS = ("Centre", "Outer")
BOTH = "Both"


@dataclass(frozen=True)
class StationProfile:
    """Environment of one station."""

    station_id: str
    lat: float
    lon: float
    division_group: str
    facility_counts: Mapping[str, int]
    topic_popularity: np.ndarray
    opportunities: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "topic_popularity", np.asarray(self.topic_popularity, dtype=float)
        )
        if np.any(self.topic_popularity < 0):
            raise ValidationError(f"{self.station_id}: negative topic popularity")
        if any(v < 0 for v in self.facility_counts.values()):
            raise ValidationError(f"{self.station_id}: negative facility count")
        if self.opportunities < 0:
            raise ValidationError(f"{self.station_id}: negative opportunities")


@dataclass(frozen=True)
class TopicEmotion:
    """Per-topic emotion strengths with the normalization bounds."""

    strengths: np.ndarray
    lb: float
    ub: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "strengths", np.asarray(self.strengths, dtype=float))
        if self.lb >= self.ub:
            raise ValidationError("emotion bounds require lb < ub")

    def thetas(self) -> np.ndarray:
        return np.array([normalize_emotion(e, self.lb, self.ub) for e in self.strengths])


@dataclass(frozen=True)
class SpatialParams:
    """Weights of the attraction sigmoid.

    ``distance_sign`` controls how distance enters the sigmoid: the
    default -1 feeds the negated distance so larger theta_d means
    stronger decay; +1 reproduces the raw monotone-increasing form.
    """

    theta: np.ndarray
    theta_d: float
    epsilon: float = 0.0
    distance_sign: float = -1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if np.any(self.theta < 0) or np.any(self.theta > 1):
            raise ValidationError("theta entries must lie in [0, 1]")
        if not 0.0 <= self.theta_d <= 1.0:
            raise ValidationError("theta_d must lie in [0, 1]")
        if self.distance_sign not in (-1.0, 1.0):
            raise ValidationError("distance_sign must be -1 or +1")


@dataclass
class CorrelationResult:
    r: float
    ci_low: float
    ci_high: float
    n_pairs: int


def topic_popularity(
    word_probs: Mapping[str, np.ndarray], station_words: Iterable[str]
) -> tuple[np.ndarray, int]:
    """Sum per-topic word probabilities over a station's word multiset.

    Words absent from the topic table contribute nothing; their count is
    returned alongside the popularity vector.
    """
    n_topics = None
    for probs in word_probs.values():
        n_topics = len(probs)
        break
    if n_topics is None:
        raise ValidationError("empty topic table")
    x = np.zeros(n_topics)
    misses = 0
    for word, mult in Counter(station_words).items():
        probs = word_probs.get(word)
        if probs is None:
            misses += mult
            continue
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValidationError(f"word {word!r}: probabilities outside [0, 1]")
        x += mult * probs
    return x, misses


def normalize_emotion(strength: float, lb: float, ub: float) -> float:
    """Map an emotion strength into [0, 1], clamping at the bounds."""
    if lb >= ub:
        raise ValidationError("emotion bounds require lb < ub")
    return float(min(1.0, max(0.0, (strength - lb) / (ub - lb))))


def attraction(
    profile: StationProfile, params: SpatialParams, distance_km: float
) -> float:
    """Opportunity-scaled sigmoid of topic popularity plus distance."""
    if distance_km < 0:
        raise ValidationError("distance must be nonnegative")
    if len(params.theta) != len(profile.topic_popularity):
        raise ValidationError("theta and topic popularity lengths differ")
    z = (
        float(params.theta @ profile.topic_popularity)
        + params.theta_d * (params.distance_sign * distance_km)
        + params.epsilon
    )
    return profile.opportunities * float(expit(z))


def destination_distribution(
    origin_id: str,
    profiles: Sequence[StationProfile],
    params: SpatialParams,
    distances: Mapping[str, float],
) -> tuple[list[str], np.ndarray]:
    """Choice probabilities over all stations except the origin.

    ``distances`` maps destination ids to kilometres from the origin.
    """
    dest = [p for p in profiles if p.station_id != origin_id]
    if not dest:
        raise ValidationError("need at least one destination")
    scores = np.array(
        [attraction(p, params, distances[p.station_id]) for p in dest]
    )
    total = scores.sum()
    if total <= 0:
        raise ComputationError("no opportunities: every attraction is zero")
    return [p.station_id for p in dest], scores / total


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return float(2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a)))


def distance_matrix(profiles: Sequence[StationProfile]) -> np.ndarray:
    n = len(profiles)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            km = haversine_km(
                profiles[i].lat, profiles[i].lon, profiles[j].lat, profiles[j].lon
            )
            d[i, j] = d[j, i] = km
    return d


def predicted_flow_matrix(
    profiles: Sequence[StationProfile],
    params: SpatialParams,
    distances: np.ndarray | None = None,
) -> np.ndarray:
    """Per-origin probability rows of the attraction model (diagonal 0)."""
    if distances is None:
        distances = distance_matrix(profiles)
    n = len(profiles)
    out = np.zeros((n, n))
    ids = [p.station_id for p in profiles]
    for i, origin in enumerate(ids):
        dist = {ids[j]: float(distances[i, j]) for j in range(n) if j != i}
        dest_ids, probs = destination_distribution(origin, profiles, params, dist)
        for sid, p in zip(dest_ids, probs):
            out[i, ids.index(sid)] = p
    return out


def gravity_baseline(
    masses: Sequence[float], distances: np.ndarray, beta: float
) -> np.ndarray:
    """Per-origin probabilities of the mass-product / distance-power model."""
    masses = np.asarray(masses, dtype=float)
    distances = np.asarray(distances, dtype=float)
    n = len(masses)
    if np.any(masses < 0):
        raise ValidationError("masses must be nonnegative")
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(distances[off_diag] <= 0):
        raise ValidationError("zero distance between distinct stations")
    out = np.zeros((n, n))
    for s in range(n):
        scores = np.zeros(n)
        for i in range(n):
            if i == s:
                continue
            scores[i] = masses[i] / distances[s, i] ** beta
        total = scores.sum()
        if total <= 0:
            raise ComputationError("no opportunities: gravity row sums to zero")
        out[s] = scores / total
    return out


def observed_shares(observed: FlowMatrix) -> np.ndarray:
    """Per-origin destination shares; rows without outflow become NaN."""
    counts = observed.counts.astype(float)
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = counts / row_sums
    shares[row_sums[:, 0] == 0] = np.nan
    return shares


def evaluate_flow_correlation(
    predicted: np.ndarray,
    observed: FlowMatrix,
    group: str,
    division_groups: Mapping[str, str],
) -> CorrelationResult:
    """Pearson correlation of predicted vs observed shares over OD pairs.

    ``group`` is ``"Centre"``, ``"Outer"`` or ``"Both"``; a pair belongs
    to a named group when both its endpoints do.  The 95% interval uses
    the Fisher z-transform with n = number of pairs.
    """
    if group not in GROUPS and group != BOTH:
        raise ValidationError(f"unknown group {group!r}")
    shares = observed_shares(observed)
    ids = observed.station_index
    xs, ys = [], []
    for i, origin in enumerate(ids):
        for j, dest in enumerate(ids):
            if i == j or np.isnan(shares[i, j]):
                continue
            if group != BOTH and (
                division_groups[origin] != group or division_groups[dest] != group
            ):
                continue
            xs.append(predicted[i, j])
            ys.append(shares[i, j])
    n = len(xs)
    if n < 3:
        raise ValidationError(f"group {group!r} has {n} OD pairs; need at least 3")
    x = np.asarray(xs)
    y = np.asarray(ys)
    if np.allclose(x, x[0]) or np.allclose(y, y[0]):
        raise ComputationError("degenerate correlation: zero variance")
    r = float(np.corrcoef(x, y)[0, 1])
    if abs(r) >= 1.0 - 1e-12:
        return CorrelationResult(r, r, r, n)
    if n <= 3:
        return CorrelationResult(r, -1.0, 1.0, n)
    z = np.arctanh(r)
    half = 1.96 / np.sqrt(n - 3)
    return CorrelationResult(
        r, float(np.tanh(z - half)), float(np.tanh(z + half)), n
    )


# ---------------------------------------------------------------------------
# file formats


PROFILE_BASE_HEADER = [
    "station_id",
    "name",
    "lat",
    "lon",
    "division_group",
    "entertainment",
    "shopping",
    "food",
    "opportunities",
]


def load_profiles_csv(path: str | Path) -> list[StationProfile]:
    """Stations file extended with facility counts, opportunities and
    ``x_0..x_{M-1}`` topic popularity columns."""
    header, rows = read_csv(path)
    if header[: len(PROFILE_BASE_HEADER)] != PROFILE_BASE_HEADER:
        raise ValidationError(f"{path}: bad profile header {header[:9]}")
    topic_cols = header[len(PROFILE_BASE_HEADER) :]
    for k, col in enumerate(topic_cols):
        if col != f"x_{k}":
            raise ValidationError(f"{path}: expected topic column x_{k}, got {col!r}")
    profiles = []
    for row in rows:
        base = row[: len(PROFILE_BASE_HEADER)]
        topics = [float(v) for v in row[len(PROFILE_BASE_HEADER) :]]
        profiles.append(
            StationProfile(
                station_id=base[0],
                lat=float(base[2]),
                lon=float(base[3]),
                division_group=base[4],
                facility_counts={
                    "entertainment": int(base[5]),
                    "shopping": int(base[6]),
                    "food": int(base[7]),
                },
                topic_popularity=np.array(topics),
                opportunities=float(base[8]),
            )
        )
    return profiles


def write_profiles_csv(
    path: str | Path,
    profiles: Sequence[StationProfile],
    names: Mapping[str, str] | None = None,
    config_hash: str | None = None,
) -> Path:
    n_topics = len(profiles[0].topic_popularity) if profiles else 0
    header = PROFILE_BASE_HEADER + [f"x_{k}" for k in range(n_topics)]
    rows = []
    for p in profiles:
        rows.append(
            [
                p.station_id,
                (names or {}).get(p.station_id, p.station_id),
                p.lat,
                p.lon,
                p.division_group,
                p.facility_counts["entertainment"],
                p.facility_counts["shopping"],
                p.facility_counts["food"],
                p.opportunities,
            ]
            + list(p.topic_popularity)
        )
    return write_csv(path, header, rows, config_hash)


def load_topic_table_csv(path: str | Path) -> dict[str, np.ndarray]:
    """``word,topic_id,probability`` rows -> word to per-topic vector."""
    header, rows = read_csv(path)
    if header != ["word", "topic_id", "probability"]:
        raise ValidationError(f"{path}: bad topic table header {header}")
    triples = [(w, int(t), float(p)) for w, t, p in rows]
    if not triples:
        raise ValidationError(f"{path}: empty topic table")
    n_topics = max(t for _, t, _ in triples) + 1
    table: dict[str, np.ndarray] = {}
    for word, topic, prob in triples:
        table.setdefault(word, np.zeros(n_topics))[topic] = prob
    return table


def load_emotion_csv(path: str | Path) -> dict[str, float]:
    header, rows = read_csv(path)
    if header != ["word", "strength"]:
        raise ValidationError(f"{path}: bad emotion header {header}")
    return {w: float(s) for w, s in rows}


def topic_emotions(
    topic_table: Mapping[str, np.ndarray],
    emotions: Mapping[str, float],
    lb: float | None = None,
    ub: float | None = None,
) -> TopicEmotion:
    """Sum word emotion strengths per topic; default bounds are the
    min/max of the per-topic sums."""
    n_topics = len(next(iter(topic_table.values())))
    strengths = np.zeros(n_topics)
    for word, probs in topic_table.items():
        e = emotions.get(word)
        if e is None:
            continue
        for topic in np.nonzero(np.asarray(probs) > 0)[0]:
            strengths[int(topic)] += e
    lo = float(strengths.min()) if lb is None else lb
    hi = float(strengths.max()) if ub is None else ub
    if lo >= hi:
        lo, hi = lo - 0.5, lo + 0.5
    return TopicEmotion(strengths=strengths, lb=lo, ub=hi)


def write_correlation_csv(
    results: Sequence[tuple[str, str, CorrelationResult]],
    path: str | Path,
    config_hash: str | None = None,
) -> Path:
    rows = (
        (model, group, res.r, res.ci_low, res.ci_high, res.n_pairs)
        for model, group, res in results
    )
    return write_csv(
        path, ["model", "group", "r", "ci_low", "ci_high", "n"], rows, config_hash
    )
