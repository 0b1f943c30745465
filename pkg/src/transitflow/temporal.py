"""Evening departure-volume recurrence: simulation and estimation.

The volume leaving a station evolves as
``Y_t = N * (tau * t - mu * Y_{t-1} + c)`` over fixed-width time bins,
trading delay cost (tau, rises with waiting time) against travelling
discomfort (mu, rises with the previous bin's crowding).  Dividing by the
station total N reads each value as a departure probability.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from datetime import time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ComputationError, ValidationError
from .ingest import TripRecord
from .ioutil import write_csv

DEFAULT_BIN_MINUTES = 10
DEFAULT_WINDOW_START = time(17, 0)
DEFAULT_HORIZON_BINS = 42  # 17:00-24:00 in 10-minute bins


@dataclass(frozen=True)
class TemporalParams:
    """Perception parameters of one origin (or one OD pair)."""

    tau: float
    mu: float
    c: float
    p0: float
    n_total: int

    def __post_init__(self) -> None:
        if self.n_total <= 0:
            raise ValidationError("n_total must be positive")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValidationError("p0 must lie in [0, 1]")


@dataclass
class VolumeSeries:
    """Departure volumes over contiguous bins starting at ``t_start``."""

    origin: str
    values: np.ndarray
    t_start: time = DEFAULT_WINDOW_START
    bin_width: int = DEFAULT_BIN_MINUTES
    n_clamped: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size < 2:
            raise ValidationError("volume series needs at least two bins")
        if np.any(self.values < 0):
            raise ValidationError("volumes must be nonnegative")


@dataclass
class FitDiagnostics:
    rss: float
    n_obs: int


def simulate_volume_series(
    params: TemporalParams,
    horizon_bins: int,
    origin: str = "origin",
    t_start: time = DEFAULT_WINDOW_START,
    bin_width: int = DEFAULT_BIN_MINUTES,
) -> VolumeSeries:
    """Iterate the recurrence for ``horizon_bins`` bins (t = 0 included).

    Negative volumes are clamped to zero and counted, never hidden.
    """
    if horizon_bins < 2:
        raise ValidationError("horizon_bins must be at least 2")
    n = float(params.n_total)
    values = np.empty(horizon_bins)
    values[0] = n * params.p0
    clamped = 0
    for t in range(1, horizon_bins):
        y = n * (params.tau * t - params.mu * values[t - 1] + params.c)
        if y < 0.0:
            y = 0.0
            clamped += 1
        values[t] = y
    return VolumeSeries(
        origin=origin,
        values=values,
        t_start=t_start,
        bin_width=bin_width,
        n_clamped=clamped,
    )


def fit_recurrence_params(
    series: VolumeSeries, n_total: int
) -> tuple[TemporalParams, FitDiagnostics]:
    """Least-squares estimates of (tau, mu, c) from one observed series.

    Regresses Y_t / N on [t, -Y_{t-1}, 1] for t >= 1; p0 is read off the
    first bin.  A constant series makes the regressors collinear and
    raises "unidentifiable".
    """
    y = series.values
    if y.size < 4:
        raise ValidationError("need at least 4 bins to fit 3 parameters")
    n = float(n_total)
    t = np.arange(1, y.size)
    design = np.column_stack([t, -y[:-1], np.ones(y.size - 1)])
    if np.linalg.matrix_rank(design) < 3:
        raise ComputationError("unidentifiable: collinear regressors (constant series?)")
    target = y[1:] / n
    coef, residual, *_ = np.linalg.lstsq(design, target, rcond=None)
    rss = float(residual[0]) if residual.size else float(
        ((target - design @ coef) ** 2).sum()
    )
    if coef[1] < 0:
        # reported as-is rather than clipped; a negative discomfort weight
        # usually means the series carries no crowding feedback
        warnings.warn(
            f"{series.origin}: negative discomfort estimate mu={coef[1]:.3g}",
            stacklevel=2,
        )
    # observation noise can push the first bin past N; p0 is a probability
    p0 = float(np.clip(y[0] / n, 0.0, 1.0))
    params = TemporalParams(
        tau=float(coef[0]),
        mu=float(coef[1]),
        c=float(coef[2]),
        p0=p0,
        n_total=int(n_total),
    )
    return params, FitDiagnostics(rss=rss, n_obs=int(y.size - 1))


def departure_probabilities(series: VolumeSeries, n_total: int) -> np.ndarray:
    """p_t = Y_t / N, clipped into [0, 1]; out-of-range bins are counted
    on the series' clamp counter."""
    p = series.values / float(n_total)
    out_of_range = int(((p < 0) | (p > 1)).sum())
    series.n_clamped += out_of_range
    return np.clip(p, 0.0, 1.0)


def build_volume_series(
    trips: Iterable[TripRecord],
    window_start: time = DEFAULT_WINDOW_START,
    horizon_bins: int = DEFAULT_HORIZON_BINS,
    bin_width: int = DEFAULT_BIN_MINUTES,
    per_pair: bool = False,
) -> dict[str, VolumeSeries]:
    """Bin trip departures per origin (or per OD pair) inside the window.

    Counts aggregate over all dates present in ``trips``; the key of a
    pair series is ``"origin->destination"``.
    """
    start_minutes = window_start.hour * 60 + window_start.minute
    counts: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(horizon_bins))
    for trip in trips:
        t = trip.t_start.time()
        offset = t.hour * 60 + t.minute - start_minutes
        if offset < 0:
            continue
        b = offset // bin_width
        if b >= horizon_bins:
            continue
        key = f"{trip.origin}->{trip.destination}" if per_pair else trip.origin
        counts[key][b] += 1.0
    return {
        key: VolumeSeries(key, values, t_start=window_start, bin_width=bin_width)
        for key, values in sorted(counts.items())
    }


def split_train_test(
    keys: Sequence[str], test_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Deterministic shuffle split of fit units (origins or pairs)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must be in (0, 1)")
    order = sorted(keys)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    n_test = max(1, int(round(test_fraction * len(order))))
    if n_test >= len(order):
        raise ValidationError("test split would consume every unit")
    return sorted(order[n_test:]), sorted(order[:n_test])


def write_series_csv(
    series: Mapping[str, VolumeSeries], path: str | Path, config_hash: str | None = None
) -> Path:
    rows = []
    for key in sorted(series):
        for b, v in enumerate(series[key].values):
            rows.append((key, b, v))
    return write_csv(path, ["origin", "bin_index", "volume"], rows, config_hash)


def write_params_csv(
    params: Mapping[str, tuple[TemporalParams, FitDiagnostics]],
    path: str | Path,
    config_hash: str | None = None,
) -> Path:
    rows = []
    for key in sorted(params):
        p, diag = params[key]
        rows.append((key, p.tau, p.mu, p.c, p.p0, diag.rss))
    return write_csv(path, ["origin", "tau", "mu", "c", "p0", "rss"], rows, config_hash)
