"""Pipeline configuration and stage orchestration.

Each stage reads the previous stage's artifacts from the output
directory, writes its own (every file stamped with the config hash), and
appends a manifest record.  Timestamps live only in the manifest so that
reruns with the same config and seed are byte-identical.
"""

from __future__ import annotations

import time as _time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date as date_type
from datetime import datetime, time, timedelta
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import activity as act
from . import community as comm
from . import flowgraph as fg
from . import gam as gam_mod
from . import ingest as ing
from . import mixture as mix
from . import spatial as sp
from . import synth as sy
from . import temporal as tp
from .errors import ComputationError, NonConvergenceError, ValidationError
from .ioutil import config_hash, derive_seed, read_csv, read_json, write_csv, write_json

STAGES = (
    "ingest",
    "flows",
    "communities",
    "variability",
    "cluster",
    "activity",
    "spatial",
    "temporal",
    "simulate",
    "synth",
    "report",
)


class ConfigError(ValidationError):
    """Configuration problems; collects every issue, not just the first."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class MissingArtifactError(ValidationError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: Path = Path("out")
    inputs: dict[str, str] = field(default_factory=dict)
    periods: list[tuple[str, str, str]] | None = None
    community: dict[str, Any] = field(default_factory=dict)
    spatial: dict[str, Any] = field(default_factory=dict)
    temporal: dict[str, Any] = field(default_factory=dict)
    activity: dict[str, Any] = field(default_factory=dict)
    synth: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        raw = read_json(path)
        base = Path(path).resolve().parent
        cfg = cls(
            seed=int(raw.get("seed", 0)),
            out_dir=(base / raw.get("out_dir", "out")).resolve()
            if not Path(raw.get("out_dir", "out")).is_absolute()
            else Path(raw["out_dir"]),
            inputs={k: str(v) for k, v in raw.get("inputs", {}).items() if v},
            periods=[tuple(p) for p in raw["periods"]] if raw.get("periods") else None,
            community=dict(raw.get("community", {})),
            spatial=dict(raw.get("spatial", {})),
            temporal=dict(raw.get("temporal", {})),
            activity=dict(raw.get("activity", {})),
            synth=dict(raw.get("synth", {})),
            raw=raw,
        )
        # input paths are relative to the config file
        cfg.inputs = {
            k: str((base / v) if not Path(v).is_absolute() else Path(v))
            for k, v in cfg.inputs.items()
        }
        return cfg

    @property
    def hash(self) -> str:
        # where outputs land does not change what was computed
        return config_hash({k: v for k, v in self.raw.items() if k != "out_dir"})

    def period_table(self) -> ing.PeriodTable:
        if self.periods is None:
            return ing.PeriodTable.default()
        return ing.PeriodTable(
            periods=tuple(
                ing.Period(name, time.fromisoformat(start), time.fromisoformat(end))
                for name, start, end in self.periods
            )
        )

    def input_path(self, key: str, synth_name: str | None = None) -> Path:
        """Configured input path, falling back to the synth stage output."""
        if key in self.inputs:
            return Path(self.inputs[key])
        if synth_name is not None:
            candidate = self.out_dir / "inputs" / synth_name
            if candidate.exists():
                return candidate
        raise MissingArtifactError(
            f"input {key!r} is not configured and no synth artifact exists; "
            f"set inputs.{key} or run the synth command first"
        )

    def validate(self, command: str) -> None:
        problems: list[str] = []
        if not isinstance(self.seed, int):
            problems.append("seed must be an integer")
        if self.periods is not None:
            for entry in self.periods:
                if len(entry) != 3:
                    problems.append(f"periods entry {entry!r} is not (name, start, end)")
                else:
                    for value in entry[1:]:
                        try:
                            time.fromisoformat(value)
                        except ValueError:
                            problems.append(f"periods entry {entry!r}: bad time {value!r}")
        runs = self.community.get("runs", 20)
        if not isinstance(runs, int) or runs < 1:
            problems.append("community.runs must be a positive integer")
        threshold = self.community.get("threshold", 0.5)
        if not 0 < threshold < 1:
            problems.append("community.threshold must be in (0, 1)")
        frac = self.temporal.get("test_fraction", 0.2)
        if not 0 < frac < 1:
            problems.append("temporal.test_fraction must be in (0, 1)")
        beta = self.spatial.get("beta", 2.0)
        if beta <= 0:
            problems.append("spatial.beta must be positive")
        for key, path in self.inputs.items():
            if not Path(path).exists():
                problems.append(f"inputs.{key}: path {path} does not exist")
        if problems:
            raise ConfigError(problems)


def _slug(period_name: str) -> str:
    return period_name.lower().replace("/", "_").replace(" ", "_")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path.name}; run the {producer!r} command first"
        )
    return path


def _append_manifest(cfg: PipelineConfig, command: str, outputs: list[str], started: float) -> None:
    path = cfg.out_dir / "manifest.json"
    records = read_json(path) if path.exists() else []
    records.append(
        {
            "command": command,
            "config_hash": cfg.hash,
            "seed": cfg.seed,
            "started": datetime.fromtimestamp(started).isoformat(),
            "duration_s": round(_time.time() - started, 3),
            "outputs": sorted(outputs),
        }
    )
    write_json(path, records)


# ---------------------------------------------------------------------------
# synth stage


def _stage_synth(cfg: PipelineConfig) -> list[str]:
    s = cfg.synth
    out = cfg.out_dir / "inputs"
    truth_dir = cfg.out_dir / "truth"
    n_stations = int(s.get("n_stations", 20))
    n_topics = int(s.get("n_topics", 3))
    network = s.get("network", {})
    sizes = tuple(network.get("sizes", [n_stations // 2, n_stations - n_stations // 2]))
    within = float(network.get("within", 5.0))
    cross = float(network.get("cross", 1.0))
    days_a = int(s.get("days_regime_a", 17))
    days_b = int(s.get("days_regime_b", 1))
    population = s.get("population", {})
    table = cfg.period_table()

    stations, profiles = sy.generate_city(
        n_stations, n_topics, derive_seed(cfg.seed, "synth", "city")
    )
    ids = tuple(st.station_id for st in stations)
    topic_rows, emotion_rows = sy.generate_topic_files(
        n_topics, derive_seed(cfg.seed, "synth", "topics")
    )

    # calendar: working days from 2015-04-01, weekends skipped, one holiday;
    # the regime-B day is the first working day after the holiday
    working: list[date_type] = []
    weekend: list[date_type] = []
    holiday: list[date_type] = []
    day = date_type(2015, 4, 1)
    holiday_after = 3  # working days before the holiday block
    while len(working) < days_a + days_b:
        if day.weekday() >= 5:
            weekend.append(day)
        elif len(holiday) == 0 and len(working) == holiday_after:
            holiday.append(day)
        else:
            working.append(day)
        day += timedelta(days=1)
    # regime B starts on the first working day after the holiday
    regime_b_days = {
        d.isoformat() for d in working[holiday_after : holiday_after + days_b]
    }

    # planted regimes: regime B permutes the station-to-block assignment
    block = np.repeat(np.arange(len(sizes)), sizes)
    rng = np.random.default_rng(derive_seed(cfg.seed, "synth", "regime_b"))
    perm = rng.permutation(n_stations)
    truth_a = comm.Partition.from_array(ids, block)
    truth_b = comm.Partition.from_array(ids, block[perm])

    trips: list[ing.TripRecord] = []
    for d in working:
        iso = d.isoformat()
        truth = truth_b if iso in regime_b_days else truth_a
        labels = truth.to_array(ids)
        means = np.where(labels[:, None] == labels[None, :], within, cross)
        np.fill_diagonal(means, 0.0)
        for period in table.names:
            day_rng = np.random.default_rng(
                derive_seed(cfg.seed, "synth", "flows", iso, period)
            )
            counts = day_rng.poisson(means)
            np.fill_diagonal(counts, 0)
            flow = fg.FlowMatrix(ids, counts.astype(np.int64), iso, period)
            trips.extend(
                sy.sample_trips_from_network(
                    flow,
                    d,
                    period,
                    table,
                    derive_seed(cfg.seed, "synth", "trips", iso, period),
                    card_prefix=f"P{iso}-{_slug(period)}-",
                )
            )

    pattern_day = working[1].isoformat()
    pop_spec = sy.PopulationSpec(
        n_cards=int(population.get("n_cards", 400)),
        mixture=population.get("mixture", {"N2E2": 0.85, "N3E2": 0.1, "N3E3": 0.05}),
        trip_date=pattern_day,
    )
    pop_trips, pattern_truth = sy.generate_trip_population(
        pop_spec, derive_seed(cfg.seed, "synth", "population"), station_pool=list(ids)
    )
    trips.extend(pop_trips)
    trips.sort(key=lambda t: (t.t_start.isoformat(), t.card_id, t.origin))

    outputs = [
        str(ing.write_trips_csv(out / "trips.csv", trips, cfg.hash)),
        str(fg.write_stations_csv(out / "stations.csv", stations, cfg.hash)),
        str(sp.write_profiles_csv(out / "profiles.csv", profiles, config_hash=cfg.hash)),
        str(
            write_csv(
                out / "topics.csv",
                ["word", "topic_id", "probability"],
                topic_rows,
                cfg.hash,
            )
        ),
        str(write_csv(out / "emotions.csv", ["word", "strength"], emotion_rows, cfg.hash)),
        str(
            ing.write_calendar_csv(
                out / "calendar.csv",
                ing.WorkCalendar(
                    frozenset(working), frozenset(weekend), frozenset(holiday)
                ),
                cfg.hash,
            )
        ),
        str(
            write_json(
                cfg.out_dir / "truth" / "network_truth.json",
                {
                    "regime_a": {k: v for k, v in truth_a.labels.items()},
                    "regime_b": {k: v for k, v in truth_b.labels.items()},
                    "regime_b_days": sorted(regime_b_days),
                },
                config_hash=cfg.hash,
            )
        ),
        str(
            write_csv(
                truth_dir / "pattern_truth.csv",
                ["card_id", "code"],
                sorted(pattern_truth.items()),
                cfg.hash,
            )
        ),
    ]
    return outputs


# ---------------------------------------------------------------------------
# ingest / flows


def _stage_ingest(cfg: PipelineConfig) -> list[str]:
    trips_path = cfg.input_path("trips", "trips.csv")
    calendar = ing.load_calendar_csv(cfg.input_path("calendar", "calendar.csv"))
    trips, stats = ing.load_input(trips_path)
    trips = ing.filter_working_days(trips, calendar)
    out = cfg.out_dir / "trips_clean.csv"
    ing.write_trips_csv(out, trips, cfg.hash)
    stats_path = write_json(
        cfg.out_dir / "ingest_stats.json",
        {"n_trips": len(trips), "drops": stats.as_dict()},
        config_hash=cfg.hash,
    )
    return [str(out), str(stats_path)]


def _load_clean_trips(cfg: PipelineConfig) -> list[ing.TripRecord]:
    path = _require(cfg.out_dir / "trips_clean.csv", "ingest")
    trips, _ = ing.load_trips_csv(path)
    return trips


def _station_ids(cfg: PipelineConfig) -> list[str]:
    stations = fg.load_stations_csv(cfg.input_path("stations", "stations.csv"))
    return [s.station_id for s in stations]


def _stage_flows(cfg: PipelineConfig) -> list[str]:
    trips = _load_clean_trips(cfg)
    ids = _station_ids(cfg)
    table = cfg.period_table()
    dates = sorted({t.t_start.date().isoformat() for t in trips})
    outputs = []
    index = []
    for iso in dates:
        for period in table.names:
            fm = fg.build_flow_matrix(trips, iso, period, table, ids)
            path = cfg.out_dir / "flows" / f"{iso}__{_slug(period)}.csv"
            fg.write_flow_csv(fm, path, cfg.hash)
            outputs.append(str(path))
            index.append(
                {
                    "date": iso,
                    "period": period,
                    "file": path.name,
                    "total_trips": fm.total_trips,
                }
            )
    idx_path = write_json(cfg.out_dir / "flows" / "index.json", index, config_hash=cfg.hash)
    outputs.append(str(idx_path))
    return outputs


# ---------------------------------------------------------------------------
# communities / variability / cluster


def _detect_cell(
    cfg: PipelineConfig, ids: Sequence[str], entry: Mapping[str, Any]
) -> tuple[str, str, comm.Partition, bool]:
    fm = fg.read_flow_csv(cfg.out_dir / "flows" / entry["file"], ids)
    seed = derive_seed(cfg.seed, "communities", entry["date"], entry["period"])
    if fm.total_trips == 0:
        raise ComputationError(
            f"flow cell {entry['date']} {entry['period']} is empty; cannot detect communities"
        )
    if cfg.community.get("consensus", True):
        result = comm.consensus_partition(
            fm,
            runs=int(cfg.community.get("runs", 20)),
            threshold=float(cfg.community.get("threshold", 0.5)),
            max_iter=int(cfg.community.get("max_iter", 20)),
            seed=seed,
        )
        return entry["date"], entry["period"], result.partition, result.converged
    return entry["date"], entry["period"], comm.louvain_partition(fm, seed), True


def _stage_communities(cfg: PipelineConfig, workers: int = 1) -> list[str]:
    ids = _station_ids(cfg)
    index = read_json(_require(cfg.out_dir / "flows" / "index.json", "flows"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda e: _detect_cell(cfg, ids, e), index))
    else:
        results = [_detect_cell(cfg, ids, e) for e in index]
    non_converged = [(d, p) for d, p, _, ok in results if not ok]
    if non_converged:
        raise NonConvergenceError(
            f"consensus did not converge for cells: {non_converged}"
        )
    table = cfg.period_table()
    by_date: dict[str, dict[str, comm.Partition]] = {}
    for d, period, part, _ in results:
        by_date.setdefault(d, {})[period] = part
    snapshots = [
        comm.CommunitySnapshot(d, {p: by_date[d][p] for p in table.names})
        for d in sorted(by_date)
    ]
    path = comm.write_snapshots_csv(snapshots, cfg.out_dir / "snapshots.csv", cfg.hash)
    return [str(path)]


def _load_snapshots(cfg: PipelineConfig) -> list[comm.CommunitySnapshot]:
    path = _require(cfg.out_dir / "snapshots.csv", "communities")
    header, rows = read_csv(path)
    table = cfg.period_table()
    by_date: dict[str, dict[str, dict[str, int]]] = {}
    for station, d, period, cid in rows:
        by_date.setdefault(d, {}).setdefault(period, {})[station] = int(cid)
    return [
        comm.CommunitySnapshot(
            d,
            {p: comm.Partition(by_date[d][p]) for p in table.names},
        )
        for d in sorted(by_date)
    ]


def _stage_variability(cfg: PipelineConfig) -> list[str]:
    snapshots = _load_snapshots(cfg)
    vm = comm.snapshot_variability_matrix(snapshots)
    path = comm.write_variability_csv(vm, cfg.out_dir / "variability.csv", cfg.hash)
    return [str(path)]


def _stage_cluster(cfg: PipelineConfig) -> list[str]:
    vm = comm.read_variability_csv(_require(cfg.out_dir / "variability.csv", "variability"))
    k_max = int(cfg.community.get("k_max", min(6, len(vm.day_index))))
    clustering = mix.cluster_snapshots_gmm(
        vm, k_max=k_max, seed=derive_seed(cfg.seed, "cluster")
    )
    rows = sorted(clustering.assignment.items())
    csv_path = write_csv(
        cfg.out_dir / "clusters.csv", ["date", "cluster"], rows, cfg.hash
    )
    model_path = write_json(
        cfg.out_dir / "cluster_model.json",
        {
            "chosen_k": clustering.chosen_k,
            "bic_scores": {str(k): v for k, v in clustering.bic_scores.items()},
            "weights": clustering.model.weights,
            "means": clustering.model.means,
            "variances": clustering.model.variances,
            "regularized": clustering.model.regularized,
            "converged": clustering.model.converged,
        },
        config_hash=cfg.hash,
    )
    return [str(csv_path), str(model_path)]


# ---------------------------------------------------------------------------
# activity


def _stage_activity(cfg: PipelineConfig) -> list[str]:
    trips = _load_clean_trips(cfg)
    chains, excluded = act.build_daily_chains(trips)
    workers = act.select_workers(chains)
    labeled = [act.label_chain(c) for c in workers]
    codes = [act.classify_pattern(lc) for lc in labeled]
    if not codes:
        raise ComputationError("no worker chains found; nothing to classify")
    floor = float(cfg.activity.get("report_floor", act.DEFAULT_REPORT_FLOOR))
    distribution = act.pattern_distribution(codes, report_floor=floor)
    raw_counts: dict[str, int] = {}
    for c in codes:
        raw_counts[c.code] = raw_counts.get(c.code, 0) + 1
    counts = {
        code: raw_counts.get(code, 0)
        for code in distribution
    }
    if act.OTHER_CODE in distribution:
        counts[act.OTHER_CODE] = sum(
            v for k, v in raw_counts.items() if k not in distribution
        )
    outputs = [
        str(act.write_pattern_csv(distribution, counts, cfg.out_dir / "patterns.csv", cfg.hash)),
        str(
            act.write_labeled_chains_csv(
                labeled, cfg.out_dir / "labeled_chains.csv", cfg.hash
            )
        ),
        str(
            write_json(
                cfg.out_dir / "activity_stats.json",
                {
                    "n_chains": len(chains),
                    "n_excluded_overlapping": excluded,
                    "n_workers": len(workers),
                },
                config_hash=cfg.hash,
            )
        ),
    ]
    return outputs


# ---------------------------------------------------------------------------
# spatial


def _evening_aggregate(cfg: PipelineConfig, ids: Sequence[str]) -> fg.FlowMatrix:
    period = cfg.spatial.get("period", "Evening")
    index = read_json(_require(cfg.out_dir / "flows" / "index.json", "flows"))
    mats = [
        fg.read_flow_csv(cfg.out_dir / "flows" / e["file"], ids)
        for e in index
        if e["period"] == period
    ]
    if not mats:
        raise ValidationError(f"no flow matrices for period {cfg.spatial.get('period', 'Evening')!r}")
    return fg.aggregate(mats)


def _stage_spatial(cfg: PipelineConfig) -> list[str]:
    profiles = sp.load_profiles_csv(cfg.input_path("profiles", "profiles.csv"))
    ids = [p.station_id for p in profiles]
    observed = _evening_aggregate(cfg, ids)

    topic_table = sp.load_topic_table_csv(cfg.input_path("topic_table", "topics.csv"))
    emotions = sp.load_emotion_csv(cfg.input_path("emotion_dict", "emotions.csv"))
    theta = sp.topic_emotions(topic_table, emotions).thetas()
    n_topics = len(profiles[0].topic_popularity)
    if len(theta) != n_topics:
        raise ValidationError(
            f"topic table has {len(theta)} topics but profiles carry {n_topics}"
        )
    params = sp.SpatialParams(
        theta=theta,
        theta_d=float(cfg.spatial.get("theta_d", 0.5)),
        epsilon=float(cfg.spatial.get("epsilon", 0.0)),
        distance_sign=float(cfg.spatial.get("distance_sign", -1.0)),
    )

    opportunities_mode = cfg.spatial.get("opportunities", "inflow")
    if opportunities_mode == "inflow":
        inflow = observed.counts.sum(axis=0).astype(float)
        profiles = [
            sp.StationProfile(
                station_id=p.station_id,
                lat=p.lat,
                lon=p.lon,
                division_group=p.division_group,
                facility_counts=p.facility_counts,
                topic_popularity=p.topic_popularity,
                opportunities=float(inflow[i]),
            )
            for i, p in enumerate(profiles)
        ]

    distances = sp.distance_matrix(profiles)
    predicted = sp.predicted_flow_matrix(profiles, params, distances)
    masses = np.array([p.opportunities for p in profiles])
    gravity = sp.gravity_baseline(masses, distances, float(cfg.spatial.get("beta", 2.0)))

    groups = {p.station_id: p.division_group for p in profiles}
    results = []
    for model_name, matrix in (("attraction", predicted), ("gravity", gravity)):
        for group in ("Both", "Centre", "Outer"):
            try:
                res = sp.evaluate_flow_correlation(matrix, observed, group, groups)
            except (ValidationError, ComputationError):
                continue
            results.append((model_name, group, res))
    if not results:
        raise ComputationError("no group had enough OD pairs for correlation")
    path = sp.write_correlation_csv(results, cfg.out_dir / "spatial_eval.csv", cfg.hash)
    return [str(path)]


# ---------------------------------------------------------------------------
# temporal / simulate


def _temporal_features(
    cfg: PipelineConfig,
    units: Sequence[str],
    profiles: Sequence[sp.StationProfile],
    observed: fg.FlowMatrix,
    per_pair: bool,
) -> dict[str, dict[str, float]]:
    by_id = {p.station_id: p for p in profiles}
    ids = list(observed.station_index)
    dist = sp.distance_matrix(profiles)
    feats: dict[str, dict[str, float]] = {}
    for unit in units:
        if per_pair:
            origin, dest = unit.split("->")
            d = dist[ids.index(origin), ids.index(dest)]
        else:
            origin = unit
            i = ids.index(origin)
            row = observed.counts[i].astype(float)
            total = row.sum()
            d = float((row @ dist[i]) / total) if total > 0 else float(dist[i].mean())
        p = by_id[origin]
        feats[unit] = {
            "entertainment": float(p.facility_counts["entertainment"]),
            "shopping": float(p.facility_counts["shopping"]),
            "food": float(p.facility_counts["food"]),
            "distance": float(d),
        }
    return feats


def _fit_target_gam(
    feats: Mapping[str, Mapping[str, float]],
    values: Mapping[str, float],
    units: Sequence[str],
    feature_names: Sequence[str],
    link: str,
    allow_fallback: bool,
) -> tuple[gam_mod.GamModel, str]:
    y = np.array([values[u] for u in units])
    x = {name: np.array([feats[u][name] for u in units]) for name in feature_names}
    used = link
    if link == "log" and np.any(y <= 0):
        if not allow_fallback:
            raise ValidationError(
                "non-positive targets under the log link; enable link fallback "
                "or use the identity link"
            )
        used = "identity"
    model = gam_mod.fit_gam(x, y, link=used)
    return model, used


def _stage_temporal(cfg: PipelineConfig) -> list[str]:
    trips = _load_clean_trips(cfg)
    profiles = sp.load_profiles_csv(cfg.input_path("profiles", "profiles.csv"))
    ids = [p.station_id for p in profiles]
    observed = _evening_aggregate(cfg, ids)
    tcfg = cfg.temporal
    per_pair = bool(tcfg.get("per_pair", False))
    window_start = time.fromisoformat(tcfg.get("window_start", "17:00"))
    horizon = int(tcfg.get("horizon_bins", tp.DEFAULT_HORIZON_BINS))
    bin_minutes = int(tcfg.get("bin_minutes", tp.DEFAULT_BIN_MINUTES))
    min_volume = float(tcfg.get("min_volume", 30))

    series = tp.build_volume_series(
        trips,
        window_start=window_start,
        horizon_bins=horizon,
        bin_width=bin_minutes,
        per_pair=per_pair,
    )
    fitted: dict[str, tuple[tp.TemporalParams, tp.FitDiagnostics]] = {}
    skipped: dict[str, str] = {}
    negative_mu: list[str] = []
    for unit, s in series.items():
        n_total = float(s.values.sum())
        if n_total < min_volume:
            skipped[unit] = f"total volume {n_total} below minimum {min_volume}"
            continue
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                fitted[unit] = tp.fit_recurrence_params(s, int(round(n_total)))
            if any("negative discomfort" in str(w.message) for w in caught):
                negative_mu.append(unit)
        except (ValidationError, ComputationError) as exc:
            skipped[unit] = str(exc)
    if len(fitted) < gam_mod.MIN_OBSERVATIONS + 2:
        raise ComputationError(
            f"only {len(fitted)} fit units available; need at least "
            f"{gam_mod.MIN_OBSERVATIONS + 2} for the feature models"
        )

    units = sorted(fitted)
    train, test = tp.split_train_test(
        units,
        float(tcfg.get("test_fraction", 0.2)),
        derive_seed(cfg.seed, "temporal", "split"),
    )
    feats = _temporal_features(cfg, units, profiles, observed, per_pair)

    target_specs = {
        "mu": (("entertainment", "shopping", "food"), tcfg.get("mu_link", "log")),
        "tau": (("distance",), tcfg.get("tau_link", "log")),
        "c": (("distance",), "identity"),
        "p0": (("distance",), "identity"),
    }
    allow_fallback = bool(tcfg.get("link_fallback", True))
    report_rows = []
    curve_rows = []
    predicted: dict[str, dict[str, float]] = {u: {} for u in test}
    for target, (names, link) in target_specs.items():
        values = {
            u: getattr(fitted[u][0], target) for u in units
        }
        model, used = _fit_target_gam(
            feats, values, train, names, link, allow_fallback
        )
        for name, edf, p_value in gam_mod.gam_term_significance(model):
            report_rows.append((target, name, edf, p_value, used))
        for name in names:
            xs, f, lo, hi = gam_mod.term_curve(model, name)
            for xv, fv, lv, hv in zip(xs, f, lo, hi):
                curve_rows.append((target, name, xv, fv, lv, hv))
        if test:
            x_test = {n: np.array([feats[u][n] for u in test]) for n in names}
            pred, _ = gam_mod.predict_params(model, x_test)
            for u, value in zip(test, pred):
                predicted[u][target] = float(value)

    outputs = [
        str(tp.write_series_csv(series, cfg.out_dir / "series.csv", cfg.hash)),
        str(tp.write_params_csv(fitted, cfg.out_dir / "params.csv", cfg.hash)),
        str(
            write_csv(
                cfg.out_dir / "gam_report.csv",
                ["target", "term", "edf", "p_value", "link"],
                report_rows,
                cfg.hash,
            )
        ),
        str(
            write_csv(
                cfg.out_dir / "gam_curves.csv",
                ["target", "term", "x", "f", "ci_low", "ci_high"],
                curve_rows,
                cfg.hash,
            )
        ),
        str(
            write_json(
                cfg.out_dir / "temporal_meta.json",
                {
                    "train_units": train,
                    "test_units": test,
                    "skipped": skipped,
                    "negative_mu_units": negative_mu,
                    "per_pair": per_pair,
                    "horizon_bins": horizon,
                    "bin_minutes": bin_minutes,
                },
                config_hash=cfg.hash,
            )
        ),
        str(
            write_csv(
                cfg.out_dir / "predicted_params.csv",
                ["origin", "tau", "mu", "c", "p0"],
                [
                    (
                        u,
                        predicted[u].get("tau", 0.0),
                        predicted[u].get("mu", 0.0),
                        predicted[u].get("c", 0.0),
                        predicted[u].get("p0", 0.0),
                    )
                    for u in test
                ],
                cfg.hash,
            )
        ),
    ]
    return outputs


def _stage_simulate(cfg: PipelineConfig) -> list[str]:
    meta = read_json(_require(cfg.out_dir / "temporal_meta.json", "temporal"))
    header, rows = read_csv(_require(cfg.out_dir / "predicted_params.csv", "temporal"))
    series_header, series_rows = read_csv(_require(cfg.out_dir / "series.csv", "temporal"))
    observed: dict[str, list[float]] = {}
    for origin, b, v in series_rows:
        observed.setdefault(origin, []).append(float(v))

    sim_rows = []
    correlations = {}
    for origin, tau, mu, c, p0 in rows:
        obs = np.array(observed.get(origin, []))
        if obs.size < 2:
            continue
        n_total = max(obs.sum(), 1.0)
        params = tp.TemporalParams(
            tau=float(tau),
            mu=float(mu),
            c=float(c),
            p0=float(np.clip(float(p0), 0.0, 1.0)),
            n_total=int(round(n_total)),
        )
        sim = tp.simulate_volume_series(params, int(meta["horizon_bins"]), origin=origin)
        for b, (ov, sv) in enumerate(zip(obs, sim.values)):
            sim_rows.append((origin, b, ov, sv))
        if np.std(obs) > 0 and np.std(sim.values) > 0:
            correlations[origin] = float(np.corrcoef(obs, sim.values)[0, 1])
    outputs = [
        str(
            write_csv(
                cfg.out_dir / "simulation.csv",
                ["origin", "bin_index", "volume_observed", "volume_simulated"],
                sim_rows,
                cfg.hash,
            )
        ),
        str(
            write_json(
                cfg.out_dir / "sim_summary.json",
                {
                    "per_origin_r": correlations,
                    "median_r": float(np.median(list(correlations.values())))
                    if correlations
                    else None,
                },
                config_hash=cfg.hash,
            )
        ),
    ]
    return outputs


# ---------------------------------------------------------------------------
# report


def _stage_report(cfg: PipelineConfig) -> list[str]:
    needed = {
        "patterns.csv": "activity",
        "spatial_eval.csv": "spatial",
        "gam_report.csv": "temporal",
        "variability.csv": "variability",
        "clusters.csv": "cluster",
    }
    missing = [
        f"{name} (run the {producer!r} command)"
        for name, producer in needed.items()
        if not (cfg.out_dir / name).exists()
    ]
    if missing:
        raise MissingArtifactError(
            "report inputs missing:\n  - " + "\n  - ".join(missing)
        )
    report_dir = cfg.out_dir / "report"
    outputs = []
    for name in needed:
        content = (cfg.out_dir / name).read_bytes()
        target = report_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
        outputs.append(str(target))
    cluster_model = read_json(cfg.out_dir / "cluster_model.json")
    summary = {
        "chosen_k": cluster_model["chosen_k"],
        "artifacts": sorted(p.name for p in report_dir.iterdir()),
    }
    outputs.append(str(write_json(report_dir / "summary.json", summary, config_hash=cfg.hash)))
    return outputs


# ---------------------------------------------------------------------------
# dispatcher


_STAGE_FUNCS: dict[str, Callable[..., list[str]]] = {
    "synth": _stage_synth,
    "ingest": _stage_ingest,
    "flows": _stage_flows,
    "communities": _stage_communities,
    "variability": _stage_variability,
    "cluster": _stage_cluster,
    "activity": _stage_activity,
    "spatial": _stage_spatial,
    "temporal": _stage_temporal,
    "simulate": _stage_simulate,
    "report": _stage_report,
}


def run_command(name: str, cfg: PipelineConfig, workers: int = 1) -> list[str]:
    """Run one pipeline stage; returns the artifact paths it wrote."""
    if name not in _STAGE_FUNCS:
        raise ValidationError(f"unknown command {name!r}; choose from {sorted(_STAGE_FUNCS)}")
    cfg.validate(name)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    started = _time.time()
    if name == "communities":
        outputs = _stage_communities(cfg, workers=workers)
    else:
        outputs = _STAGE_FUNCS[name](cfg)
    _append_manifest(cfg, name, outputs, started)
    return outputs


def run_all(cfg: PipelineConfig, workers: int = 1) -> list[str]:
    """Full pipeline in dependency order (synth first when configured)."""
    order = [
        "synth",
        "ingest",
        "flows",
        "communities",
        "variability",
        "cluster",
        "activity",
        "spatial",
        "temporal",
        "simulate",
        "report",
    ]
    outputs = []
    for name in order:
        if name == "synth" and not cfg.synth:
            continue
        outputs.extend(run_command(name, cfg, workers=workers))
    return outputs
