"""Missing-feature recovery from transferred neighbor relations.

Each view owns one aggregation layer: the recovered feature is an activation
of ``bias + mean(neighbors) @ weight``. Pretraining pulls every recovered
vector toward all of its relational neighbors; during joint training the
same parameters are refined by a KL term that aligns the recovered
instance's soft cluster assignment with its neighbors' assignments.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .dataset import FLOAT_FMT, MultiViewDataset
from .diffcore import ParamStore, Tensor
from .knn_transfer import TransferGraph

KL_EPS = 1e-10  # clamp for soft assignments before logs


class NonFiniteLossError(dc.NonFiniteError):
    """A training loss became NaN or infinite."""


@dataclass
class CompletionNet:
    """Per-view square aggregation weights w (D_v x D_v) and biases b (D_v)."""

    store: ParamStore
    dims: tuple[int, ...]
    activation: str = "identity"

    def weight_name(self, v: int) -> str:
        return f"comp.w{v}"

    def bias_name(self, v: int) -> str:
        return f"comp.b{v}"

    def param_names(self) -> list[str]:
        return [n for v in range(len(self.dims)) for n in (self.weight_name(v), self.bias_name(v))]


def init_completion_net(dims, activation: str = "identity", seed: int = 0) -> CompletionNet:
    if activation not in dc.ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng([seed, 0xC0])
    store = ParamStore()
    dims = tuple(int(d) for d in dims)
    for v, d in enumerate(dims):
        store.add(f"comp.w{v}", dc.glorot_uniform(rng, d, d))
        store.add(f"comp.b{v}", np.zeros(d))
    return CompletionNet(store=store, dims=dims, activation=activation)


@dataclass
class RecoveredDataset:
    """A completed dataset: every missing cell filled, provenance recorded.

    Available cells are bit-identical to the source; ``provenance[i, v]`` is
    True exactly where a value was recovered. The original mask is kept so
    relational losses can still locate the recovered entries.
    """

    views: list[np.ndarray]
    mask: np.ndarray
    n_clusters: int
    labels: np.ndarray | None
    provenance: np.ndarray

    @property
    def n_instances(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.shape[1] for v in self.views)


class CompletionBatch:
    """Constant per-view tensors precomputed from a dataset + transfer graph.

    For each view with missing entries: the entry instance ids, the stacked
    neighbor means (inputs to the aggregation layer), and flattened
    (entry, neighbor) index pairs for the relational reconstruction loss.
    """

    def __init__(self, ds: MultiViewDataset, graph: TransferGraph):
        self.views_with_entries: list[int] = []
        self.rows: dict[int, np.ndarray] = {}
        self.means: dict[int, np.ndarray] = {}
        self.pair_entry: dict[int, np.ndarray] = {}
        self.pair_neighbor: dict[int, np.ndarray] = {}
        for v in range(ds.n_views):
            items = graph.view_entries(v)
            if not items:
                continue
            self.views_with_entries.append(v)
            self.rows[v] = np.array([i for i, _ in items], dtype=np.int64)
            self.means[v] = np.stack(
                [ds.views[v][e.neighbor_ids].mean(axis=0) for _, e in items]
            )
            pe, pj = [], []
            for local, (_, e) in enumerate(items):
                pe.extend([local] * len(e.neighbor_ids))
                pj.extend(e.neighbor_ids.tolist())
            self.pair_entry[v] = np.array(pe, dtype=np.int64)
            self.pair_neighbor[v] = np.array(pj, dtype=np.int64)


def _recover_view(net: CompletionNet, params, batch: CompletionBatch, v: int) -> Tensor:
    """Recovered rows for one view (entries in ``batch.rows[v]`` order)."""
    act = dc.ACTIVATIONS[net.activation]
    pre = dc.add(dc.matmul(Tensor(batch.means[v]), params[net.weight_name(v)]), params[net.bias_name(v)])
    return act(pre)


def _loss_cr_graph(net: CompletionNet, params, ds: MultiViewDataset, batch: CompletionBatch) -> Tensor:
    total = Tensor(0.0)
    for v in batch.views_with_entries:
        rec = _recover_view(net, params, batch, v)
        targets = ds.views[v][batch.pair_neighbor[v]]
        diff = dc.sub(dc.gather_rows(rec, batch.pair_entry[v]), Tensor(targets))
        total = dc.add(total, dc.sum_sq(diff))
    return total


def recover_one(net: CompletionNet, ds: MultiViewDataset, graph: TransferGraph, i: int, v: int) -> np.ndarray:
    """Recovered feature vector for one missing cell: act(mean(K) @ w + b)."""
    if (i, v) not in graph.entries:
        raise KeyError(f"no transfer entry for instance {i}, view {v}")
    nbrs = graph.entries[(i, v)].neighbor_ids
    mean = ds.views[v][nbrs].mean(axis=0)
    pre = mean @ net.store[net.weight_name(v)] + net.store[net.bias_name(v)]
    out = dc.ACTIVATIONS[net.activation](Tensor(pre))
    return out.data


def loss_cr(net: CompletionNet, ds: MultiViewDataset, graph: TransferGraph) -> float:
    """Relational reconstruction loss: sum over missing cells and neighbors
    of the squared distance between the recovered vector and each neighbor."""
    if len(graph) == 0:
        return 0.0
    batch = CompletionBatch(ds, graph)
    params = net.store.tensors(trainable=False)
    return _loss_cr_graph(net, params, ds, batch).item()


def pretrain_completion(
    net: CompletionNet,
    ds: MultiViewDataset,
    graph: TransferGraph,
    epochs: int,
    lr: float,
) -> list[float]:
    """Full-batch Adam on the relational reconstruction loss.

    Mutates the net's parameters in place and returns the loss trace
    (one value per epoch, evaluated before that epoch's update).
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if len(graph) == 0:
        return [0.0] * epochs
    batch = CompletionBatch(ds, graph)
    names = net.param_names()
    trace = []
    for epoch in range(epochs):
        params = net.store.tensors(trainable=True, names=names)
        try:
            loss = _loss_cr_graph(net, params, ds, batch)
            trace.append(loss.item())
            grads = dc.gradients(loss, params)
            dc.adam_step(net.store, grads, lr=lr)
        except dc.NonFiniteError as err:
            raise NonFiniteLossError(f"completion pretraining, epoch {epoch}: {err}") from err
    return trace


def _loss_cc_graph(q: Tensor, a_rows: np.ndarray, j_rows: np.ndarray) -> Tensor:
    """KL(q_a || q_j) summed over (recovered instance, neighbor) pairs."""
    qa = dc.clamp_min(dc.gather_rows(q, a_rows), KL_EPS)
    qj = dc.clamp_min(dc.gather_rows(q, j_rows), KL_EPS)
    return dc.sum_all(dc.mul(qa, dc.sub(dc.log(qa), dc.log(qj))))


def cc_pairs(graph: TransferGraph, row_index=None) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (entry row, neighbor row) index pairs over all graph entries.

    ``row_index`` maps a missing cell (i, v) to its row in the assignment
    matrix; by default the row is the instance id itself.
    """
    a_rows, j_rows = [], []
    for (i, v) in sorted(graph.entries):
        row = i if row_index is None else row_index[(i, v)]
        for j in graph.entries[(i, v)].neighbor_ids.tolist():
            a_rows.append(row)
            j_rows.append(j)
    return np.array(a_rows, dtype=np.int64), np.array(j_rows, dtype=np.int64)


def loss_cc(q: np.ndarray, graph: TransferGraph, row_index=None) -> float:
    """Assignment-consistency loss between recovered instances and neighbors."""
    if len(graph) == 0:
        return 0.0
    a_rows, j_rows = cc_pairs(graph, row_index)
    return _loss_cc_graph(Tensor(q), a_rows, j_rows).item()


def materialize(net: CompletionNet, ds: MultiViewDataset, graph: TransferGraph) -> RecoveredDataset:
    """Fill every missing cell via the recovery layer; available cells copied
    bit for bit. Provenance marks exactly the recovered cells."""
    views = [v.copy() for v in ds.views]
    if len(graph) > 0:
        batch = CompletionBatch(ds, graph)
        params = net.store.tensors(trainable=False)
        for v in batch.views_with_entries:
            views[v][batch.rows[v]] = _recover_view(net, params, batch, v).data
    return RecoveredDataset(
        views=views,
        mask=ds.mask.copy(),
        n_clusters=ds.n_clusters,
        labels=None if ds.labels is None else ds.labels.copy(),
        provenance=ds.mask.astype(bool),
    )


def mean_impute(ds: MultiViewDataset) -> RecoveredDataset:
    """Baseline: fill each missing cell with its view's available-row mean."""
    views = []
    for v in range(ds.n_views):
        mat = ds.views[v].copy()
        avail = ds.available(v)
        missing = np.flatnonzero(ds.mask[:, v])
        if missing.size:
            mat[missing] = ds.views[v][avail].mean(axis=0)
        views.append(mat)
    return RecoveredDataset(
        views=views,
        mask=ds.mask.copy(),
        n_clusters=ds.n_clusters,
        labels=None if ds.labels is None else ds.labels.copy(),
        provenance=ds.mask.astype(bool),
    )


def export_recovered(rec: RecoveredDataset, out_dir) -> list[Path]:
    """Write recovered views as CSV plus a provenance file of (i, v) pairs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, mat in enumerate(rec.views):
        path = out_dir / f"recovered_view_{v}.csv"
        np.savetxt(path, mat, fmt=FLOAT_FMT, delimiter=",")
        paths.append(path)
    prov_path = out_dir / "provenance.csv"
    cells = np.argwhere(rec.provenance)
    np.savetxt(prov_path, cells, fmt="%d", delimiter=",")
    paths.append(prov_path)
    return paths
