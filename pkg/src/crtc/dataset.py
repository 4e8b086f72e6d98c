"""Multi-view datasets: loading, validation, masking protocols, synthesis.

Conventions: a dataset is V feature matrices sharing N rows plus an N x V
binary mask where 0 marks an available (instance, view) cell and 1 a missing
one. Values under missing cells are placeholders that no computation may
read; training-path code always routes around them via the mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

AVAILABLE = 0
MISSING = 1

MISSING_RATE = "missing_rate"
PAIRED_RATE = "paired_rate"


class DataError(ValueError):
    """Invalid dataset contents or an infeasible masking request."""


@dataclass
class MultiViewDataset:
    """V view matrices (N x D_v each), the availability mask, and metadata.

    ``labels`` are for evaluation only and must never feed training.
    """

    views: list[np.ndarray]
    mask: np.ndarray
    n_clusters: int
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        self.mask = np.asarray(self.mask, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        validate_dataset(self)

    @property
    def n_instances(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.shape[1] for v in self.views)

    def is_complete(self) -> bool:
        return not self.mask.any()

    def available(self, view: int) -> np.ndarray:
        """Indices of instances present in ``view``, ascending."""
        return np.flatnonzero(self.mask[:, view] == AVAILABLE)

    def missing_cells(self) -> list[tuple[int, int]]:
        """All (instance, view) cells flagged missing, row-major order."""
        rows, cols = np.nonzero(self.mask)
        return list(zip(rows.tolist(), cols.tolist()))


def validate_dataset(ds: MultiViewDataset) -> None:
    if not ds.views:
        raise DataError("dataset needs at least one view")
    n = ds.views[0].shape[0]
    for v, mat in enumerate(ds.views):
        if mat.ndim != 2:
            raise DataError(f"view {v} is not a matrix (ndim={mat.ndim})")
        if mat.shape[0] != n:
            raise DataError(f"row-count mismatch: view 0 has {n} rows, view {v} has {mat.shape[0]}")
        if not np.all(np.isfinite(mat)):
            raise DataError(f"view {v} contains non-finite values")
    if ds.mask.shape != (n, len(ds.views)):
        raise DataError(f"mask shape {ds.mask.shape} != ({n}, {len(ds.views)})")
    bad = ~np.isin(ds.mask, (AVAILABLE, MISSING))
    if bad.any():
        i, v = np.argwhere(bad)[0]
        raise DataError(f"non-binary mask value {ds.mask[i, v]} at row {i}, view {v}")
    all_missing = np.flatnonzero(ds.mask.sum(axis=1) == len(ds.views))
    if all_missing.size:
        raise DataError(f"instance {all_missing[0]} is missing in every view")
    if ds.n_clusters < 1:
        raise DataError(f"n_clusters must be positive, got {ds.n_clusters}")
    if ds.labels is not None:
        if ds.labels.shape != (n,):
            raise DataError(f"labels length {ds.labels.shape} != ({n},)")
        if ds.labels.min() < 0 or ds.labels.max() >= ds.n_clusters:
            raise DataError("labels outside [0, n_clusters)")


@dataclass(frozen=True)
class MaskProtocol:
    """How to degrade a complete dataset: kind, rate p in [0,1), and seed."""

    kind: str
    p: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (MISSING_RATE, PAIRED_RATE):
            raise DataError(f"unknown protocol kind {self.kind!r}")
        if not 0.0 <= self.p < 1.0:
            raise DataError(f"protocol rate p={self.p} outside [0, 1)")


# ---------------------------------------------------------------------------
# file I/O


def _read_csv_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        mat = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        # re-scan for a line-numbered message
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            for cell in line.split(","):
                try:
                    float(cell)
                except ValueError:
                    raise DataError(f"{path}, line {lineno}: non-numeric cell {cell.strip()!r}") from None
        raise DataError(f"{path}: malformed CSV") from None
    return mat


def load_dataset(
    view_paths,
    mask_path=None,
    labels_path=None,
    n_clusters: int | None = None,
) -> MultiViewDataset:
    """Load header-free CSV views plus optional mask and labels files.

    An absent mask means a fully complete dataset. ``n_clusters`` is inferred
    from the labels when omitted, and must be given when no labels exist.
    """
    views = [_read_csv_matrix(p) for p in view_paths]
    n = views[0].shape[0]
    for p, v in zip(view_paths, views):
        if v.shape[0] != n:
            raise DataError(f"row-count mismatch: {view_paths[0]} has {n} rows, {p} has {v.shape[0]}")

    if mask_path is not None:
        mask_f = _read_csv_matrix(mask_path)
        mask = mask_f.astype(np.int64)
        if not np.array_equal(mask_f, mask):
            raise DataError(f"{mask_path}: non-integer mask values")
    else:
        mask = np.zeros((n, len(views)), dtype=np.int64)

    labels = None
    if labels_path is not None:
        labels_f = _read_csv_matrix(labels_path).reshape(-1)
        labels = labels_f.astype(np.int64)
        if not np.array_equal(labels_f, labels):
            raise DataError(f"{labels_path}: non-integer labels")

    if n_clusters is None:
        if labels is None:
            raise DataError("n_clusters required when no labels file is given")
        n_clusters = int(labels.max()) + 1

    return MultiViewDataset(views=views, mask=mask, n_clusters=n_clusters, labels=labels)


FLOAT_FMT = "%.17g"  # round-trips float64 exactly


def save_views(ds, out_dir, prefix: str = "view") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, mat in enumerate(ds.views):
        path = out_dir / f"{prefix}_{v}.csv"
        np.savetxt(path, mat, fmt=FLOAT_FMT, delimiter=",")
        paths.append(path)
    return paths


def save_mask(ds, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, ds.mask, fmt="%d", delimiter=",")
    return path


def save_labels(labels: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")
    return path


def zero_filled_views(ds: MultiViewDataset) -> list[np.ndarray]:
    """View copies with missing rows set to zero (baseline imputation)."""
    views = []
    for v, mat in enumerate(ds.views):
        out = mat.copy()
        out[ds.mask[:, v] == MISSING] = 0.0
        views.append(out)
    return views


# ---------------------------------------------------------------------------
# masking protocols


def apply_mask_protocol(ds: MultiViewDataset, protocol: MaskProtocol) -> MultiViewDataset:
    """Degrade a complete dataset per the protocol; feature values untouched.

    missing_rate: cells are removed uniformly at random until the fraction of
    missing (instance, view) cells reaches p, never leaving a row with zero
    available views. paired_rate (two views only): exactly round(p*N)
    instances keep both views; every other instance keeps exactly one view,
    chosen uniformly.
    """
    if not ds.is_complete():
        raise DataError("mask protocols require a fully complete dataset")
    n, n_views = ds.n_instances, ds.n_views
    rng = np.random.default_rng(protocol.seed)

    if protocol.kind == PAIRED_RATE:
        if n_views != 2:
            raise DataError(f"paired_rate protocol needs exactly 2 views, got {n_views}")
        mask = np.zeros((n, 2), dtype=np.int64)
        n_paired = int(round(protocol.p * n))
        paired = rng.choice(n, size=n_paired, replace=False)
        keep = rng.integers(0, 2, size=n)
        single = np.setdiff1d(np.arange(n), paired)
        mask[single, 1 - keep[single]] = MISSING
    else:
        target = int(round(protocol.p * n * n_views))
        if target > n * (n_views - 1):
            raise DataError(
                f"missing rate p={protocol.p} infeasible: every instance must keep one view"
            )
        mask = np.zeros((n, n_views), dtype=np.int64)
        row_missing = np.zeros(n, dtype=np.int64)
        removed = 0
        while removed < target:
            for cell in rng.permutation(n * n_views):
                if removed == target:
                    break
                i, v = divmod(int(cell), n_views)
                if mask[i, v] == AVAILABLE and row_missing[i] < n_views - 1:
                    mask[i, v] = MISSING
                    row_missing[i] += 1
                    removed += 1

    return MultiViewDataset(
        views=[v.copy() for v in ds.views],
        mask=mask,
        n_clusters=ds.n_clusters,
        labels=None if ds.labels is None else ds.labels.copy(),
    )


# ---------------------------------------------------------------------------
# synthetic benchmark


def synth_blobs(
    n_per_cluster: int,
    n_clusters: int,
    n_views: int,
    dims,
    sigma: float,
    seed: int = 0,
    separation: float = 1.0,
) -> MultiViewDataset:
    """Gaussian blob benchmark: shared cluster codes mapped into each view.

    Cluster c gets the latent code ``separation * e_c``; view v applies a
    fixed random orthonormal map into D_v dimensions and adds N(0, sigma^2)
    noise. Labels are populated (evaluation only).
    """
    dims = list(dims)
    if len(dims) != n_views:
        raise DataError(f"got {len(dims)} dims for {n_views} views")
    if min(n_per_cluster, n_clusters, n_views, *dims) < 1:
        raise DataError("all size arguments must be positive")
    if sigma < 0:
        raise DataError("sigma must be >= 0")
    for d in dims:
        if d < n_clusters:
            raise DataError(f"view dimension {d} < n_clusters {n_clusters}; separation impossible")

    rng = np.random.default_rng(seed)
    n = n_per_cluster * n_clusters
    labels = np.repeat(np.arange(n_clusters), n_per_cluster)
    codes = separation * np.eye(n_clusters)

    views = []
    for d in dims:
        basis, _ = np.linalg.qr(rng.standard_normal((d, n_clusters)))
        centers = codes @ basis.T  # C x d, pairwise distance separation*sqrt(2)
        views.append(centers[labels] + sigma * rng.standard_normal((n, d)))

    mask = np.zeros((n, n_views), dtype=np.int64)
    return MultiViewDataset(views=views, mask=mask, n_clusters=n_clusters, labels=labels)
