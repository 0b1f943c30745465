"""Diagonal-covariance Gaussian mixtures fitted by EM with BIC selection.

Used to cluster days by their variability-matrix rows.  EM starts from a
Ward agglomerative clustering; a degenerate covariance triggers one refit
with ridge regularization on the variances, flagged in the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .community import VariabilityMatrix
from .errors import ComputationError, ValidationError

COVARIANCE_RIDGE = 1e-6
DEGENERATE_VARIANCE = 1e-12
EM_MAX_ITER = 500
EM_TOL = 1e-9


class _DegenerateCovariance(Exception):
    pass


@dataclass
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray  # diagonal covariances, (k, d)
    log_likelihood: float
    loglik_trace: list[float]
    regularized: bool
    converged: bool

    @property
    def k(self) -> int:
        return len(self.weights)

    def n_parameters(self) -> int:
        k, d = self.means.shape
        return (k - 1) + k * d + k * d

    def bic(self, n: int) -> float:
        """BIC = -2 logL + params ln(n); smaller is better."""
        return -2.0 * self.log_likelihood + self.n_parameters() * np.log(n)

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        log_r = _log_prob(x, self.weights, self.means, self.variances)
        log_norm = _logsumexp_rows(log_r)
        return np.exp(log_r - log_norm[:, None])

    def assign(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.responsibilities(x), axis=1)


@dataclass
class SnapshotClustering:
    assignment: dict[str, int]
    model: MixtureModel
    chosen_k: int
    bic_scores: dict[int, float]


def _log_prob(x: np.ndarray, weights, means, variances) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, len(weights)))
    for c in range(len(weights)):
        var = variances[c]
        diff2 = (x - means[c]) ** 2 / var
        out[:, c] = (
            np.log(weights[c])
            - 0.5 * (d * np.log(2 * np.pi) + np.log(var).sum())
            - 0.5 * diff2.sum(axis=1)
        )
    return out


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    peak = a.max(axis=1)
    return peak + np.log(np.exp(a - peak[:, None]).sum(axis=1))


def ward_init(x: np.ndarray, k: int) -> np.ndarray:
    """Hard initial labels from Ward agglomerative clustering."""
    n = x.shape[0]
    if k == 1 or n == 1:
        return np.zeros(n, dtype=int)
    z = linkage(x, method="ward")
    labels = fcluster(z, t=k, criterion="maxclust") - 1
    return labels.astype(int)


def _m_step(x, resp, ridge: float):
    n, d = x.shape
    nk = resp.sum(axis=0)
    if np.any(nk <= 1e-12):
        raise _DegenerateCovariance("empty mixture component")
    weights = nk / n
    means = (resp.T @ x) / nk[:, None]
    variances = np.empty((len(nk), d))
    for c in range(len(nk)):
        diff = x - means[c]
        variances[c] = (resp[:, c][:, None] * diff**2).sum(axis=0) / nk[c] + ridge
    if np.any(variances < DEGENERATE_VARIANCE):
        raise _DegenerateCovariance("collapsed variance")
    return weights, means, variances


def fit_gmm_em(
    x: np.ndarray,
    k: int,
    init_labels: np.ndarray | None = None,
    ridge: float = 0.0,
    max_iter: int = EM_MAX_ITER,
    tol: float = EM_TOL,
) -> MixtureModel:
    """EM for a diagonal Gaussian mixture from hard initial labels.

    Raises :class:`ComputationError` on a degenerate covariance when
    ``ridge`` is zero; callers are expected to refit with the declared
    ridge constant in that case.
    """
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    if k < 1 or k > n:
        raise ValidationError(f"k={k} out of range for {n} points")
    labels = ward_init(x, k) if init_labels is None else init_labels
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0

    try:
        weights, means, variances = _m_step(x, resp, ridge)
        trace: list[float] = []
        converged = False
        for _ in range(max_iter):
            log_r = _log_prob(x, weights, means, variances)
            log_norm = _logsumexp_rows(log_r)
            ll = float(log_norm.sum())
            if not np.isfinite(ll):
                raise _DegenerateCovariance("non-finite likelihood")
            if trace and ll + 1e-9 * max(1.0, abs(trace[-1])) < trace[-1]:
                raise ComputationError("EM log-likelihood decreased")
            trace.append(ll)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-2])):
                converged = True
                break
            resp = np.exp(log_r - log_norm[:, None])
            weights, means, variances = _m_step(x, resp, ridge)
    except _DegenerateCovariance as exc:
        raise ComputationError(f"degenerate covariance: {exc}") from exc

    return MixtureModel(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=trace[-1],
        loglik_trace=trace,
        regularized=ridge > 0.0,
        converged=converged,
    )


def _fit_with_refit(x: np.ndarray, k: int, seed: int) -> MixtureModel:
    try:
        return fit_gmm_em(x, k, ridge=0.0)
    except ComputationError:
        pass
    try:
        return fit_gmm_em(x, k, ridge=COVARIANCE_RIDGE)
    except ComputationError:
        # last resort: seeded random partitions covering every label
        rng = np.random.default_rng(seed)
        last: ComputationError | None = None
        for attempt in range(3):
            labels = np.concatenate(
                [np.arange(k), rng.integers(0, k, size=len(x) - k)]
            )
            rng.shuffle(labels)
            try:
                return fit_gmm_em(x, k, init_labels=labels, ridge=COVARIANCE_RIDGE)
            except ComputationError as exc:
                last = exc
        raise last if last is not None else ComputationError("mixture fit failed")


def cluster_snapshots_gmm(
    vm: VariabilityMatrix, k_max: int, seed: int = 0
) -> SnapshotClustering:
    """Model-based clustering of days by their variability rows.

    For each k in 1..k_max a mixture is fitted by EM initialized from Ward
    clustering; the number of clusters minimizing BIC wins (ties to the
    smaller k).
    """
    n = len(vm.day_index)
    if k_max < 1 or k_max > n:
        raise ValidationError(f"k_max must be in 1..{n}")
    x = np.asarray(vm.values, dtype=float)
    models: dict[int, MixtureModel] = {}
    bic_scores: dict[int, float] = {}
    for k in range(1, k_max + 1):
        # a k the data cannot support (components empty even after the
        # ridged refit) is skipped, not fatal; selection runs over the rest
        try:
            model = _fit_with_refit(x, k, seed=seed + k)
        except ComputationError:
            continue
        models[k] = model
        bic_scores[k] = float(model.bic(n))
    if not models:
        raise ComputationError("no mixture size could be fitted")
    chosen_k = min(bic_scores, key=lambda k: (bic_scores[k], k))
    model = models[chosen_k]
    hard = model.assign(x)
    assignment = {day: int(c) for day, c in zip(vm.day_index, hard)}
    return SnapshotClustering(
        assignment=assignment,
        model=model,
        chosen_k=chosen_k,
        bic_scores=bic_scores,
    )
