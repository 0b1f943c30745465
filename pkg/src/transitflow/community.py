"""Community snapshots of flow networks and their variability.

Directed modularity with an out-degree x in-degree null model, a seeded
two-phase Louvain optimizer, consensus clustering over repeated runs,
Pearson contingency coefficients between partitions, and the day-by-day
variability matrix that feeds the snapshot clustering.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ComputationError, ValidationError
from .flowgraph import FlowMatrix
from .ioutil import write_csv

# Strictly positive modularity gain required before a move counts as an
# improvement; keeps floating-point dust from causing endless passes.
GAIN_TOL = 1e-12


@dataclass(frozen=True)
class Partition:
    """Station -> community labels, canonicalized to contiguous ids.

    Labels are renumbered from 0 in order of first appearance over the
    sorted station ids, so two partitions are equal exactly when they
    group stations identically.
    """

    labels: Mapping[str, int]

    def __post_init__(self) -> None:
        canonical: dict[str, int] = {}
        remap: dict[int, int] = {}
        for station in sorted(self.labels):
            raw = self.labels[station]
            if raw not in remap:
                remap[raw] = len(remap)
            canonical[station] = remap[raw]
        object.__setattr__(self, "labels", canonical)

    @property
    def stations(self) -> frozenset[str]:
        return frozenset(self.labels)

    @property
    def n_communities(self) -> int:
        return len(set(self.labels.values())) if self.labels else 0

    def communities(self) -> list[frozenset[str]]:
        groups: dict[int, set[str]] = {}
        for station, cid in self.labels.items():
            groups.setdefault(cid, set()).add(station)
        return [frozenset(groups[c]) for c in sorted(groups)]

    def to_array(self, station_index: Sequence[str]) -> np.ndarray:
        missing = [s for s in station_index if s not in self.labels]
        if missing:
            raise ValidationError(f"partition does not cover stations {missing[:5]}")
        return np.array([self.labels[s] for s in station_index], dtype=np.int64)

    @classmethod
    def from_array(cls, station_index: Sequence[str], labels: np.ndarray) -> "Partition":
        return cls({s: int(c) for s, c in zip(station_index, labels)})


@dataclass(frozen=True)
class CommunitySnapshot:
    """Per-period partitions of one day, over a shared station universe."""

    date: str
    partitions: Mapping[str, Partition]

    def __post_init__(self) -> None:
        universes = {p.stations for p in self.partitions.values()}
        if len(universes) > 1:
            raise ValidationError("period partitions disagree on the station universe")

    @property
    def period_names(self) -> tuple[str, ...]:
        return tuple(self.partitions)


@dataclass
class VariabilityMatrix:
    """Symmetric matrix of contingency coefficients between days."""

    day_index: tuple[str, ...]
    values: np.ndarray

    def row(self, day: str) -> np.ndarray:
        return self.values[self.day_index.index(day)]


@dataclass
class ConsensusResult:
    partition: Partition
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# modularity


def _degree_sums(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    kout = adj.sum(axis=1)
    kin = adj.sum(axis=0)
    return kout, kin, float(adj.sum())


def _modularity_arrays(adj: np.ndarray, labels: np.ndarray) -> float:
    """Directed modularity of a labeling; tolerates self-loops (aggregates)."""
    kout, kin, m = _degree_sums(adj)
    if m <= 0:
        raise ComputationError("empty graph")
    q = 0.0
    for c in np.unique(labels):
        members = labels == c
        within = adj[np.ix_(members, members)].sum()
        q += within / m - (kout[members].sum() * kin[members].sum()) / (m * m)
    return float(q)


def directed_modularity(flow: FlowMatrix, part: Partition) -> float:
    """Quality of a partition against the out x in degree null model."""
    labels = part.to_array(flow.station_index)
    return _modularity_arrays(flow.counts.astype(float), labels)


# ---------------------------------------------------------------------------
# Louvain


def _local_moves(
    adj: np.ndarray,
    rng: np.random.Generator,
    init: np.ndarray | None = None,
    degrees: tuple[np.ndarray, np.ndarray, float] | None = None,
) -> tuple[np.ndarray, bool]:
    """Single-node move phase; returns (labels, any strict improvement).

    Candidate communities are the node's in/out neighbours' communities,
    its own, and a fresh singleton.  Ties go to the lowest community id.
    ``degrees`` supplies (kout, kin, m) of an enclosing graph when the
    moves run on a community's submatrix against the global objective.
    """
    n = adj.shape[0]
    labels = np.arange(n) if init is None else init.copy()
    kout, kin, m = _degree_sums(adj) if degrees is None else degrees
    if m <= 0:
        raise ComputationError("empty graph")
    # label slots grow when nodes detach into fresh singletons
    n_slots = (n if init is None else int(labels.max()) + 1) + n
    sum_out = np.bincount(labels, weights=kout, minlength=n_slots).astype(float)
    sum_in = np.bincount(labels, weights=kin, minlength=n_slots).astype(float)
    n_used = n_slots - n
    m2 = m * m

    improved_any = False
    while True:
        improved_pass = False
        for i in rng.permutation(n):
            a = labels[i]
            ko, ki = kout[i], kin[i]
            # take i out of its community
            sum_out[a] -= ko
            sum_in[a] -= ki
            link = np.bincount(labels, weights=adj[i] + adj[:, i], minlength=n_slots)
            link[a] -= 2.0 * adj[i, i]
            mask = link > 0
            mask[a] = True
            candidates = np.nonzero(mask)[0]
            gains = link[candidates] / m - (
                ko * sum_in[candidates] + ki * sum_out[candidates]
            ) / m2
            # argmax returns the first maximum; candidates ascend, so
            # exact ties already resolve to the lowest community id
            best_pos = int(np.argmax(gains))
            best_gain = gains[best_pos]
            best = int(candidates[best_pos])
            if best_gain < 0.0:
                # a fresh singleton (gain exactly 0) beats every negative
                # option; highest id, so it loses all ties
                if n_used == n_slots:
                    sum_out = np.concatenate([sum_out, np.zeros(n)])
                    sum_in = np.concatenate([sum_in, np.zeros(n)])
                    n_slots += n
                best = n_used
                n_used += 1
                best_gain = 0.0

            stay_gain = link[a] / m - (ko * sum_in[a] + ki * sum_out[a]) / m2
            labels[i] = best
            sum_out[best] += ko
            sum_in[best] += ki
            if best != a and best_gain > stay_gain + GAIN_TOL:
                improved_pass = True
        if not improved_pass:
            break
        improved_any = True
    # renumber contiguously, first appearance in node order
    _, labels = np.unique(labels, return_inverse=True)
    return labels, improved_any


def _aggregate_adj(adj: np.ndarray, labels: np.ndarray) -> np.ndarray:
    k = int(labels.max()) + 1
    onehot = np.zeros((adj.shape[0], k))
    onehot[np.arange(adj.shape[0]), labels] = 1.0
    return onehot.T @ adj @ onehot


def _split_pass(
    adj: np.ndarray, labels: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """Try to split each community by re-optimizing its interior against
    the global objective; greedy merging cannot undo a bad early merge,
    this pass can."""
    kout, kin, m = _degree_sums(adj)
    labels = labels.copy()
    improved = False
    next_label = int(labels.max()) + 1
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        if len(members) < 2:
            continue
        sub = adj[np.ix_(members, members)]
        sub_labels, _ = _local_moves(
            sub, rng, degrees=(kout[members], kin[members], m)
        )
        if len(np.unique(sub_labels)) < 2:
            continue
        whole = _within_score(sub, kout[members], kin[members], m, np.zeros(len(members), dtype=int))
        split = _within_score(sub, kout[members], kin[members], m, sub_labels)
        if split > whole + GAIN_TOL:
            for sub_c in np.unique(sub_labels)[1:]:
                labels[members[sub_labels == sub_c]] = next_label
                next_label += 1
            improved = True
    return labels, improved


def _within_score(
    sub: np.ndarray, kout: np.ndarray, kin: np.ndarray, m: float, labels: np.ndarray
) -> float:
    """Modularity contribution of one community's interior grouping."""
    score = 0.0
    for c in np.unique(labels):
        members = labels == c
        score += sub[np.ix_(members, members)].sum() / m - (
            kout[members].sum() * kin[members].sum()
        ) / (m * m)
    return float(score)


def _louvain_once(
    adj: np.ndarray, rng: np.random.Generator, init: np.ndarray | None = None
) -> np.ndarray:
    adj = adj.astype(float)
    labels, _ = _local_moves(adj, rng, init=init)
    current_q = _modularity_arrays(adj, labels)
    while True:
        # coarse phase: aggregate and move whole communities
        agg = _aggregate_adj(adj, labels)
        agg_labels, _ = _local_moves(agg, rng)
        labels = agg_labels[labels]
        # fine phases: single-station refinement, then community splits
        labels, _ = _local_moves(adj, rng, init=labels)
        labels, _ = _split_pass(adj, labels, rng)
        labels, _ = _local_moves(adj, rng, init=labels)
        _, labels = np.unique(labels, return_inverse=True)
        q = _modularity_arrays(adj, labels)
        if q <= current_q + GAIN_TOL:
            break
        current_q = q
    return labels


def default_restarts(n_nodes: int) -> int:
    """Seeded restarts per call: greedy merge order matters most on tiny
    graphs, so small inputs get several independent passes while large
    networks keep the classic single run."""
    if n_nodes <= 8:
        return 8
    return max(1, min(6, int(np.ceil(48 / n_nodes))))


def _louvain_arrays(adj: np.ndarray, seed: int, restarts: int | None = None) -> np.ndarray:
    n = adj.shape[0]
    if restarts is None:
        restarts = default_restarts(n)
    best_labels: np.ndarray | None = None
    best_q = -np.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        if r == 0:
            init = None  # the classic all-singletons start
        else:
            # diversified restarts escape shared greedy-merge basins
            groups = 2 + (r - 1) % max(1, n - 1)
            init = rng.integers(0, groups, size=n)
        labels = _louvain_once(adj, rng, init=init)
        q = _modularity_arrays(adj, labels)
        if q > best_q + GAIN_TOL:
            best_q, best_labels = q, labels
    return best_labels


def louvain_partition(
    flow: FlowMatrix, seed: int, restarts: int | None = None
) -> Partition:
    """Greedy two-phase Louvain on directed modularity.

    Deterministic for a fixed seed: node visiting order and the restart
    streams all derive from it.  The best-scoring restart wins; ties keep
    the earliest.
    """
    if float(flow.counts.sum()) <= 0:
        raise ComputationError("empty graph")
    labels = _louvain_arrays(flow.counts.astype(float), seed, restarts)
    return Partition.from_array(flow.station_index, labels)


# ---------------------------------------------------------------------------
# consensus clustering


def consensus_partition(
    flow: FlowMatrix,
    runs: int = 100,
    threshold: float = 0.5,
    max_iter: int = 20,
    seed: int = 0,
) -> ConsensusResult:
    """Stabilize Louvain by re-clustering the co-assignment matrix.

    Repeats ``runs`` seeded Louvain runs, builds the matrix of pairwise
    co-assignment fractions, zeroes entries below ``threshold`` and
    re-runs on that matrix until every run agrees or ``max_iter`` is hit,
    in which case the most frequent partition is returned with
    ``converged=False``.
    """
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    if not 0.0 < threshold < 1.0:
        raise ValidationError("threshold must be in (0, 1)")
    if float(flow.counts.sum()) <= 0:
        raise ComputationError("empty graph")

    n = flow.n_stations
    current = flow.counts.astype(float)
    ensemble: list[np.ndarray] = []
    for iteration in range(1, max_iter + 1):
        ensemble = [
            _louvain_arrays(current, seed + (iteration - 1) * runs + r)
            for r in range(runs)
        ]
        keys = [tuple(lbl.tolist()) for lbl in ensemble]
        if len(set(keys)) == 1:
            return ConsensusResult(
                partition=Partition.from_array(flow.station_index, ensemble[0]),
                converged=True,
                iterations=iteration,
            )
        co = np.zeros((n, n))
        for lbl in ensemble:
            co += (lbl[:, None] == lbl[None, :]).astype(float)
        co /= runs
        co[co < threshold] = 0.0
        np.fill_diagonal(co, 0.0)
        if co.sum() <= 0:
            break
        current = co

    counts: dict[tuple, int] = {}
    for lbl in ensemble:
        counts[tuple(lbl.tolist())] = counts.get(tuple(lbl.tolist()), 0) + 1
    most_frequent = max(sorted(counts), key=lambda k: counts[k])
    return ConsensusResult(
        partition=Partition.from_array(flow.station_index, np.array(most_frequent)),
        converged=False,
        iterations=max_iter,
    )


# ---------------------------------------------------------------------------
# variability


def _contingency_arrays(a: np.ndarray, b: np.ndarray) -> float:
    n = a.size
    if n < 2:
        raise ComputationError("degenerate table: need at least two items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    expected = rows @ cols / n
    chi2 = float(((table - expected) ** 2 / expected).sum())
    return float(np.sqrt(chi2 / (chi2 + n)))


def contingency_correlation(a: Partition, b: Partition) -> float:
    """Pearson contingency coefficient sqrt(chi2 / (chi2 + n)) in [0, 1)."""
    if a.stations != b.stations:
        raise ValidationError("partitions cover different station universes")
    order = sorted(a.stations)
    return _contingency_arrays(
        np.array([a.labels[s] for s in order]),
        np.array([b.labels[s] for s in order]),
    )


def _combined_labeling(snapshot: CommunitySnapshot, periods: Sequence[str]) -> np.ndarray:
    """One labeling over (station x period) items; labels of different
    periods never collide."""
    stations = sorted(next(iter(snapshot.partitions.values())).stations)
    parts = []
    offset = 0
    for period in periods:
        part = snapshot.partitions[period]
        arr = np.array([part.labels[s] for s in stations]) + offset
        offset = int(arr.max()) + 1
        parts.append(arr)
    return np.concatenate(parts)


def snapshot_variability_matrix(
    snapshots: Sequence[CommunitySnapshot],
) -> VariabilityMatrix:
    """Pairwise contingency coefficients between periods-day labelings.

    The diagonal holds each day's self-coefficient (the maximal value for
    that labeling), not zero.
    """
    if len(snapshots) < 2:
        raise ValidationError("need at least two snapshots")
    periods = snapshots[0].period_names
    universe = next(iter(snapshots[0].partitions.values())).stations
    for snap in snapshots:
        if snap.period_names != periods:
            raise ValidationError("snapshots disagree on period names")
        if next(iter(snap.partitions.values())).stations != universe:
            raise ValidationError("snapshots disagree on the station universe")
    labelings = [_combined_labeling(s, periods) for s in snapshots]
    n = len(snapshots)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            c = _contingency_arrays(labelings[i], labelings[j])
            values[i, j] = values[j, i] = c
    return VariabilityMatrix(tuple(s.date for s in snapshots), values)


# ---------------------------------------------------------------------------
# exports


def write_partition_csv(
    part: Partition, path: str | Path, config_hash: str | None = None
) -> Path:
    rows = ((s, part.labels[s]) for s in sorted(part.labels))
    return write_csv(path, ["station_id", "community_id"], rows, config_hash)


def write_snapshots_csv(
    snapshots: Sequence[CommunitySnapshot], path: str | Path, config_hash: str | None = None
) -> Path:
    rows = []
    for snap in snapshots:
        for period, part in snap.partitions.items():
            for station in sorted(part.labels):
                rows.append((station, snap.date, period, part.labels[station]))
    return write_csv(
        path, ["station_id", "date", "period", "community_id"], rows, config_hash
    )


def write_variability_csv(
    vm: VariabilityMatrix, path: str | Path, config_hash: str | None = None
) -> Path:
    header = ["date"] + list(vm.day_index)
    rows = (
        [day] + list(vm.values[i])
        for i, day in enumerate(vm.day_index)
    )
    return write_csv(path, header, rows, config_hash)


def read_variability_csv(path: str | Path) -> VariabilityMatrix:
    from .ioutil import read_csv

    header, rows = read_csv(path)
    days = header[1:]
    values = np.array([[float(x) for x in row[1:]] for row in rows])
    return VariabilityMatrix(tuple(days), values)
