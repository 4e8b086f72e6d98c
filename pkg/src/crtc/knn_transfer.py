"""Per-view KNN graphs and their transfer onto missing views.

For a missing cell (i, v): in every view u where instance i exists, find its
k nearest available neighbors, drop the ones that are themselves missing in
view v, and merge the survivors across source views (deduplicated, ordered
by source view then neighbor rank). The merged lists drive feature recovery.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import AVAILABLE, DataError, MultiViewDataset


@dataclass(frozen=True)
class TransferEntry:
    neighbor_ids: np.ndarray  # ordered, duplicate-free, all available in the target view
    fallback: bool = False


@dataclass
class TransferGraph:
    """Merged transferred neighbor lists, one entry per missing (i, v) cell."""

    entries: dict[tuple[int, int], TransferEntry]
    k: int

    def __len__(self) -> int:
        return len(self.entries)

    def view_entries(self, view: int) -> list[tuple[int, TransferEntry]]:
        """Entries targeting ``view``, ascending instance order."""
        items = [(i, e) for (i, v), e in self.entries.items() if v == view]
        items.sort(key=lambda t: t[0])
        return items

    def dump_csv(self, path) -> Path:
        """Debug dump: one ``i,v,K',fallback,neighbors...`` line per entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for (i, v) in sorted(self.entries):
            e = self.entries[(i, v)]
            ids = ",".join(str(j) for j in e.neighbor_ids.tolist())
            lines.append(f"{i},{v},{len(e.neighbor_ids)},{int(e.fallback)},{ids}")
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        return path


def pairwise_sq_distances(rows: np.ndarray, query_ids, candidate_ids) -> np.ndarray:
    """Squared Euclidean distances between row subsets, computed exactly.

    Differences are formed explicitly (no norm-expansion trick) so results
    match an element-by-element oracle bit for bit; queries are chunked to
    bound the temporary's size.
    """
    rows = np.asarray(rows, dtype=np.float64)
    q = np.asarray(query_ids, dtype=np.intp)
    c = np.asarray(candidate_ids, dtype=np.intp)
    out = np.empty((q.size, c.size), dtype=np.float64)
    cand = rows[c]
    chunk = max(1, int(2e7 // max(1, cand.size)))
    for start in range(0, q.size, chunk):
        block = rows[q[start : start + chunk]]
        diff = block[:, None, :] - cand[None, :, :]
        out[start : start + chunk] = np.sum(diff * diff, axis=-1)
    return out


def knn_in_view(ds: MultiViewDataset, view: int, anchor: int, k: int) -> np.ndarray:
    """The k nearest available instances to ``anchor`` within one view.

    Distance ties break toward the lower instance index. Returns fewer than k
    ids when fewer candidates exist; the anchor itself is always excluded.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if ds.mask[anchor, view] != AVAILABLE:
        raise ValueError(f"anchor {anchor} is missing in view {view}")
    candidates = ds.available(view)
    candidates = candidates[candidates != anchor]
    if candidates.size == 0:
        return candidates
    d2 = pairwise_sq_distances(ds.views[view], [anchor], candidates)[0]
    order = np.lexsort((candidates, d2))
    return candidates[order[:k]]


def _fallback_neighbors(ds: MultiViewDataset, view: int, k: int) -> np.ndarray:
    """k available instances closest to the view's mean of available rows."""
    avail = ds.available(view)
    if avail.size == 0:
        raise DataError(f"view {view} has no available instances; recovery impossible")
    centroid = ds.views[view][avail].mean(axis=0)
    diff = ds.views[view][avail] - centroid
    d2 = np.sum(diff * diff, axis=-1)
    order = np.lexsort((avail, d2))
    return avail[order[:k]]


def build_transfer_graph(ds: MultiViewDataset, k: int) -> TransferGraph:
    """Transferred neighbor lists for every missing cell of the dataset.

    Neighbor lists from each source view keep their rank order; the merge
    walks source views in ascending index and deduplicates on first sight.
    Entries whose merged list comes up empty fall back to the k instances
    nearest the target view's available-row mean and are flagged.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    entries: dict[tuple[int, int], TransferEntry] = {}
    knn_cache: dict[tuple[int, int], np.ndarray] = {}
    for i, v in ds.missing_cells():
        merged: list[int] = []
        seen: set[int] = set()
        for u in range(ds.n_views):
            if ds.mask[i, u] != AVAILABLE:
                continue
            if (u, i) not in knn_cache:
                knn_cache[(u, i)] = knn_in_view(ds, u, i, k)
            for j in knn_cache[(u, i)].tolist():
                if ds.mask[j, v] == AVAILABLE and j not in seen:
                    merged.append(j)
                    seen.add(j)
        if merged:
            entries[(i, v)] = TransferEntry(np.asarray(merged, dtype=np.int64))
        else:
            entries[(i, v)] = TransferEntry(_fallback_neighbors(ds, v, k), fallback=True)
    return TransferGraph(entries=entries, k=k)


def default_k(n_views: int) -> int:
    """Neighborhood size default: 10 for two-view data, 5 otherwise."""
    return 10 if n_views == 2 else 5
