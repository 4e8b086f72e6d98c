"""Self-training clustering head over the fused representation.

Soft assignments follow a Student's t kernel (one degree of freedom) around
trainable centers; the sharpened, frequency-normalized target distribution
is treated as a constant between refreshes, and training minimizes the
KL divergence between the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .completion import KL_EPS
from .diffcore import Tensor


@dataclass
class ClusterState:
    """Centers, soft assignments Q, target P, and hard assignments."""

    centers: np.ndarray
    q: np.ndarray
    p: np.ndarray
    assignments: np.ndarray


def _kmeans_single(h: np.ndarray, n_clusters: int, rng: np.random.Generator,
                   tol: float = 1e-6, max_iter: int = 300) -> tuple[np.ndarray, float]:
    """One k-means++ seeding followed by Lloyd iterations."""
    n = h.shape[0]
    centers = np.empty((n_clusters, h.shape[1]))
    centers[0] = h[rng.integers(n)]
    d2 = np.sum((h - centers[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        if total > 0:
            centers[c] = h[rng.choice(n, p=d2 / total)]
        else:
            centers[c] = h[rng.integers(n)]
        d2 = np.minimum(d2, np.sum((h - centers[c]) ** 2, axis=1))

    for _ in range(max_iter):
        dists = np.sum((h[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        for c in range(n_clusters):
            members = labels == c
            if members.any():
                new_centers[c] = h[members].mean(axis=0)
            else:
                # relocate an empty cluster to the worst-served point
                new_centers[c] = h[np.argmax(dists.min(axis=1))]
        shift = np.linalg.norm(new_centers - centers)
        centers = new_centers
        if shift < tol:
            break
    dists = np.sum((h[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    inertia = float(dists.min(axis=1).sum())
    return centers, inertia


def kmeans_init(h: np.ndarray, n_clusters: int, restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Best-inertia centers over several k-means++ runs."""
    h = np.asarray(h, dtype=np.float64)
    if n_clusters > h.shape[0]:
        raise ValueError(f"n_clusters {n_clusters} > n_instances {h.shape[0]}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng([seed, 0x3E])
    best_centers, best_inertia = None, np.inf
    for _ in range(restarts):
        centers, inertia = _kmeans_single(h, n_clusters, rng)
        if inertia < best_inertia:
            best_centers, best_inertia = centers, inertia
    return best_centers


def _student_t_graph(h: Tensor, centers: Tensor) -> Tensor:
    """Row-stochastic Student's t similarities between rows of h and centers."""
    hn = dc.sum_axis(dc.mul(h, h), axis=1, keepdims=True)
    cn = dc.sum_axis(dc.mul(centers, centers), axis=1, keepdims=True)
    cross = dc.matmul(h, dc.transpose(centers))
    d2 = dc.add(dc.add(hn, dc.transpose(cn)), dc.mul(cross, -2.0))
    t = dc.div(1.0, dc.add(d2, 1.0))
    return dc.div(t, dc.sum_axis(t, axis=1, keepdims=True))


def soft_assign(h: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Soft assignment matrix Q; rows sum to one."""
    return _student_t_graph(Tensor(h), Tensor(centers)).data


def target_distribution(q: np.ndarray) -> np.ndarray:
    """Sharpened self-training target: square Q, normalize by cluster
    frequency, renormalize rows."""
    q = np.asarray(q, dtype=np.float64)
    weight = q * q / q.sum(axis=0)
    return weight / weight.sum(axis=1, keepdims=True)


def _kl_graph(p_const: np.ndarray, q: Tensor) -> Tensor:
    """KL(P || Q) with P constant and Q epsilon-clamped before logs."""
    p = Tensor(p_const)
    log_p = Tensor(np.log(np.maximum(p_const, KL_EPS)))
    log_q = dc.log(dc.clamp_min(q, KL_EPS))
    return dc.sum_all(dc.mul(p, dc.sub(log_p, log_q)))


def loss_mc(p: np.ndarray, q: np.ndarray) -> float:
    """Clustering loss KL(P || Q)."""
    return _kl_graph(np.asarray(p, dtype=np.float64), Tensor(q)).item()


def hard_assign(q: np.ndarray) -> np.ndarray:
    """Most-confident cluster per row; ties go to the lowest index."""
    return np.argmax(q, axis=1).astype(np.int64)


def nearest_center(h: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest center per row; ties to the lowest index."""
    dists = np.sum((h[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(dists, axis=1).astype(np.int64)


def kmeans_labels(h: np.ndarray, n_clusters: int, restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Convenience: fit centers and return nearest-center assignments."""
    return nearest_center(h, kmeans_init(h, n_clusters, restarts=restarts, seed=seed))
