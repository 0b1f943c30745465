"""Independent oracles shared by the unit and acceptance tests.

These deliberately avoid the library's own code paths: exact rational
arithmetic for modularity and brute-force enumeration over all set
partitions for small graphs.
"""

from fractions import Fraction

import numpy as np

from transitflow.community import _modularity_arrays


def rational_modularity(adj, labels):
    """Pairwise directed-modularity definition in exact arithmetic."""
    n = len(labels)
    m = Fraction(int(np.sum(adj)))
    kout = [Fraction(int(v)) for v in adj.sum(axis=1)]
    kin = [Fraction(int(v)) for v in adj.sum(axis=0)]
    q = Fraction(0)
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                q += Fraction(int(adj[i, j])) - kout[i] * kin[j] / m
    return q / m


def set_partitions(n):
    """All set partitions of range(n) as restricted-growth label tuples."""
    labels = [0] * n

    def rec(i, max_label):
        if i == n:
            yield tuple(labels)
            return
        for lab in range(max_label + 2):
            labels[i] = lab
            yield from rec(i + 1, max(max_label, lab))

    if n == 0:
        return
    yield from rec(1, 0)


def best_partition_exhaustive(adj):
    """Maximum-modularity partition by enumeration; oracle for Louvain."""
    best_q, best_labels = -np.inf, None
    adj = np.asarray(adj, dtype=float)
    for labels in set_partitions(adj.shape[0]):
        q = _modularity_arrays(adj, np.array(labels))
        if q > best_q:
            best_q, best_labels = q, labels
    return best_q, best_labels
