"""Clustering evaluation: ACC under optimal matching, NMI, ARI.

All three are invariant to relabeling of either argument. ACC solves the
cluster-to-class matching exactly with the assignment algorithm (greedy
matching understates it); NMI normalizes mutual information by the
geometric mean of the entropies.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _as_pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if truth.shape != pred.shape:
        raise ValueError(f"label length mismatch: {truth.shape[0]} vs {pred.shape[0]}")
    if truth.size == 0:
        raise ValueError("empty labelings")
    return truth, pred


def contingency(truth, pred) -> np.ndarray:
    """Contingency table over relabeled (contiguous from 0) classes."""
    truth, pred = _as_pair(truth, pred)
    _, ti = np.unique(truth, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def acc(truth, pred) -> float:
    """Fraction of instances matched under the best cluster-to-class map."""
    table = contingency(truth, pred)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / table.sum()


def nmi(truth, pred) -> float:
    """Mutual information over sqrt(H(truth) * H(pred)).

    Conventions: 1 when both labelings are constant (identical trivial
    partitions), 0 when exactly one is constant.
    """
    table = contingency(truth, pred).astype(np.float64)
    n = table.sum()
    pxy = table / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    h_t = -np.sum(px[px > 0] * np.log(px[px > 0]))
    h_p = -np.sum(py[py > 0] * np.log(py[py > 0]))
    if h_t == 0.0 and h_p == 0.0:
        return 1.0
    if h_t == 0.0 or h_p == 0.0:
        return 0.0
    nz = pxy > 0
    mi = np.sum(pxy[nz] * (np.log(pxy[nz]) - np.log(np.outer(px, py)[nz])))
    return float(mi / np.sqrt(h_t * h_p))


def ari(truth, pred) -> float:
    """Adjusted Rand index via pair counting with expected-index correction."""
    table = contingency(truth, pred).astype(np.float64)
    n = table.sum()
    sum_ij = (table * (table - 1) / 2).sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    sum_a = (a * (a - 1) / 2).sum()
    sum_b = (b * (b - 1) / 2).sum()
    total = n * (n - 1) / 2
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0  # both partitions trivial and identical as partitions
    return float((sum_ij - expected) / (max_index - expected))
