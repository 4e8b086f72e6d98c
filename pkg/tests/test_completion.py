import numpy as np
import pytest

from crtc import diffcore as dc
from crtc.completion import (
    CompletionBatch,
    _loss_cr_graph,
    cc_pairs,
    export_recovered,
    init_completion_net,
    loss_cc,
    loss_cr,
    materialize,
    mean_impute,
    pretrain_completion,
    recover_one,
)
from crtc.dataset import MaskProtocol, MultiViewDataset, apply_mask_protocol, synth_blobs
from crtc.knn_transfer import build_transfer_graph

from conftest import random_masked_dataset


def _identity_net(dims):
    net = init_completion_net(dims, activation="identity", seed=0)
    for v, d in enumerate(dims):
        net.store._params[f"comp.w{v}"] = np.eye(d)
        net.store._params[f"comp.b{v}"] = np.zeros(d)
    return net


def _two_view_case():
    """Instance 0 missing in view 0 with neighbors 1 and 2 there."""
    view0 = np.array([[9.0, 9.0], [1.0, 2.0], [3.0, 4.0], [0.0, 0.0]])
    view1 = np.array([[0.0], [0.1], [0.2], [5.0]])
    mask = np.zeros((4, 2), dtype=np.int64)
    mask[0, 0] = 1
    ds = MultiViewDataset(views=[view0, view1], mask=mask, n_clusters=2)
    graph = build_transfer_graph(ds, 2)
    return ds, graph


def oracle_recover(net, ds, nbrs, v):
    """Straight-line re-computation: sum, scale, affine, activation."""
    total = np.zeros(ds.views[v].shape[1])
    for j in nbrs:
        total += ds.views[v][j]
    pre = (total / len(nbrs)) @ net.store[f"comp.w{v}"] + net.store[f"comp.b{v}"]
    if net.activation == "relu":
        return np.maximum(pre, 0.0)
    if net.activation == "tanh":
        return np.tanh(pre)
    return pre


def oracle_loss_cr(net, ds, graph):
    total = 0.0
    for (i, v), entry in graph.entries.items():
        x_hat = oracle_recover(net, ds, entry.neighbor_ids.tolist(), v)
        for j in entry.neighbor_ids.tolist():
            total += float(np.sum((x_hat - ds.views[v][j]) ** 2))
    return total


# ---------------------------------------------------------------------------
# recovery


def test_identity_net_recovers_neighbor_mean():
    ds, graph = _two_view_case()
    net = _identity_net(ds.dims)
    assert graph.entries[(0, 0)].neighbor_ids.tolist() == [1, 2]
    assert np.allclose(recover_one(net, ds, graph, 0, 0), [2.0, 3.0], atol=1e-15)


def test_single_neighbor_recovery_is_that_neighbor():
    ds, graph = _two_view_case()
    graph = build_transfer_graph(ds, 1)
    net = _identity_net(ds.dims)
    assert np.allclose(recover_one(net, ds, graph, 0, 0), ds.views[0][1], atol=1e-15)


def test_recover_matches_straight_line_oracle(rng):
    ds = random_masked_dataset(rng, 12, [4, 3], missing_frac=0.3)
    graph = build_transfer_graph(ds, 3)
    net = init_completion_net(ds.dims, activation="relu", seed=4)
    for (i, v), entry in graph.entries.items():
        got = recover_one(net, ds, graph, i, v)
        want = oracle_recover(net, ds, entry.neighbor_ids.tolist(), v)
        assert np.allclose(got, want, atol=1e-12)


def test_recover_requires_graph_entry():
    ds, graph = _two_view_case()
    net = _identity_net(ds.dims)
    with pytest.raises(KeyError):
        recover_one(net, ds, graph, 1, 0)


def test_recovery_ignores_non_neighbor_rows(rng):
    ds, graph = _two_view_case()
    net = init_completion_net(ds.dims, seed=1)
    before = recover_one(net, ds, graph, 0, 0)
    ds.views[0][3] = rng.standard_normal(2) * 100  # row 3 is not a neighbor
    ds.views[0][0] = rng.standard_normal(2) * 100  # placeholder row
    after = recover_one(net, ds, graph, 0, 0)
    assert np.array_equal(before, after)


# ---------------------------------------------------------------------------
# pretraining loss


def test_loss_cr_zero_on_complete_data(rng):
    views = [rng.standard_normal((5, 2)), rng.standard_normal((5, 2))]
    ds = MultiViewDataset(views=views, mask=np.zeros((5, 2), dtype=np.int64), n_clusters=2)
    graph = build_transfer_graph(ds, 2)
    net = init_completion_net(ds.dims, seed=0)
    assert loss_cr(net, ds, graph) == 0.0


def test_loss_cr_zero_when_neighbors_collapse():
    # both neighbors identical and identity net: recovered == each neighbor
    view0 = np.array([[9.0], [2.0], [2.0], [7.0]])
    view1 = np.array([[0.0], [0.1], [0.2], [9.0]])
    mask = np.zeros((4, 2), dtype=np.int64)
    mask[0, 0] = 1
    ds = MultiViewDataset(views=[view0, view1], mask=mask, n_clusters=2)
    graph = build_transfer_graph(ds, 2)
    net = _identity_net(ds.dims)
    assert loss_cr(net, ds, graph) == pytest.approx(0.0, abs=1e-24)


def test_loss_cr_matches_double_loop_oracle(rng):
    ds = random_masked_dataset(rng, 5, [3, 2], missing_frac=0.35)
    graph = build_transfer_graph(ds, 2)
    net = init_completion_net(ds.dims, activation="tanh", seed=2)
    assert loss_cr(net, ds, graph) == pytest.approx(oracle_loss_cr(net, ds, graph), rel=1e-12)


def test_loss_cr_is_nonnegative(rng):
    for _ in range(5):
        ds = random_masked_dataset(rng, 10, [2, 3], missing_frac=0.3)
        graph = build_transfer_graph(ds, 2)
        net = init_completion_net(ds.dims, seed=int(rng.integers(100)))
        assert loss_cr(net, ds, graph) >= 0.0


def test_pretrain_rejects_zero_epochs():
    ds, graph = _two_view_case()
    net = init_completion_net(ds.dims, seed=0)
    with pytest.raises(ValueError, match="epochs"):
        pretrain_completion(net, ds, graph, epochs=0, lr=1e-3)


def test_pretrain_zero_lr_keeps_parameters():
    ds, graph = _two_view_case()
    net = init_completion_net(ds.dims, seed=0)
    before = {n: net.store[n].copy() for n in net.param_names()}
    trace = pretrain_completion(net, ds, graph, epochs=3, lr=0.0)
    assert len(trace) == 3
    for n, arr in before.items():
        assert np.array_equal(net.store[n], arr)


def test_pretrain_reduces_loss_on_blobs():
    ds = synth_blobs(n_per_cluster=30, n_clusters=3, n_views=2, dims=[6, 6], sigma=0.05, seed=3)
    ds = apply_mask_protocol(ds, MaskProtocol("paired_rate", 0.5, seed=3))
    graph = build_transfer_graph(ds, 5)
    net = init_completion_net(ds.dims, seed=3)
    trace = pretrain_completion(net, ds, graph, epochs=200, lr=1e-3)
    assert trace[-1] < trace[0]
    assert loss_cr(net, ds, graph) <= trace[-1]


def test_loss_cr_gradients_pass_finite_difference_check(rng):
    ds = random_masked_dataset(rng, 8, [3, 2], missing_frac=0.3)
    graph = build_transfer_graph(ds, 2)
    net = init_completion_net(ds.dims, activation="tanh", seed=5)
    batch = CompletionBatch(ds, graph)

    def build(params):
        return _loss_cr_graph(net, params, ds, batch)

    assert dc.check_gradients(build, net.store, names=net.param_names(), h=1e-6) <= 1.0


# ---------------------------------------------------------------------------
# assignment-consistency loss


def test_loss_cc_zero_for_identical_rows():
    ds, graph = _two_view_case()
    q = np.tile([0.25, 0.75], (4, 1))
    assert loss_cc(q, graph) == 0.0


def test_loss_cc_two_point_hand_case():
    eps = 1e-3
    q = np.array([[1 - eps, eps], [eps, 1 - eps]])
    view0 = np.array([[9.0], [1.0]])
    view1 = np.array([[0.0], [0.5]])
    mask = np.array([[1, 0], [0, 0]], dtype=np.int64)
    ds = MultiViewDataset(views=[view0, view1], mask=mask, n_clusters=2)
    graph = build_transfer_graph(ds, 1)
    assert graph.entries[(0, 0)].neighbor_ids.tolist() == [1]
    expected = (1 - 2 * eps) * np.log((1 - eps) / eps)  # KL between the two rows
    assert loss_cc(q, graph) == pytest.approx(expected, rel=1e-12)


def test_loss_cc_empty_graph_is_zero(rng):
    views = [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))]
    ds = MultiViewDataset(views=views, mask=np.zeros((3, 2), dtype=np.int64), n_clusters=2)
    graph = build_transfer_graph(ds, 1)
    assert loss_cc(np.full((3, 2), 0.5), graph) == 0.0


def test_loss_cc_nonnegative_on_random_assignments(rng):
    ds = random_masked_dataset(rng, 15, [2, 2], missing_frac=0.3)
    graph = build_transfer_graph(ds, 3)
    for _ in range(20):
        q = rng.random((15, 3)) + 1e-3
        q /= q.sum(axis=1, keepdims=True)
        assert loss_cc(q, graph) >= 0.0


def test_loss_cc_respects_row_index_map():
    view0 = np.array([[9.0], [1.0]])
    view1 = np.array([[0.0], [0.5]])
    mask = np.array([[1, 0], [0, 0]], dtype=np.int64)
    ds = MultiViewDataset(views=[view0, view1], mask=mask, n_clusters=2)
    graph = build_transfer_graph(ds, 1)
    q = np.array([[0.9, 0.1], [0.2, 0.8], [0.2, 0.8]])
    # route entry (0, 0) to row 2, which equals row 1: KL becomes 0
    assert loss_cc(q, graph, row_index={(0, 0): 2}) == 0.0


# ---------------------------------------------------------------------------
# materialization


def test_materialize_complete_dataset_is_identity(rng):
    views = [rng.standard_normal((4, 2)), rng.standard_normal((4, 3))]
    ds = MultiViewDataset(views=views, mask=np.zeros((4, 2), dtype=np.int64), n_clusters=2)
    graph = build_transfer_graph(ds, 2)
    rec = materialize(init_completion_net(ds.dims, seed=0), ds, graph)
    for orig, out in zip(ds.views, rec.views):
        assert np.array_equal(orig, out)
    assert rec.provenance.sum() == 0


def test_materialize_provenance_counts_mask_ones(rng):
    ds = random_masked_dataset(rng, 10, [2, 2], missing_frac=0.4)
    graph = build_transfer_graph(ds, 2)
    rec = materialize(init_completion_net(ds.dims, seed=1), ds, graph)
    assert int(rec.provenance.sum()) == int(ds.mask.sum())


def test_materialize_keeps_available_cells_bit_identical(rng):
    ds = random_masked_dataset(rng, 12, [3, 2], missing_frac=0.35)
    graph = build_transfer_graph(ds, 3)
    net = init_completion_net(ds.dims, seed=2)
    rec = materialize(net, ds, graph)
    for v in range(ds.n_views):
        avail = ds.mask[:, v] == 0
        assert np.array_equal(rec.views[v][avail], ds.views[v][avail])
        missing = ~avail
        for i in np.flatnonzero(missing):
            assert np.allclose(rec.views[v][i], recover_one(net, ds, graph, i, v), rtol=1e-12)


def test_mean_impute_fills_with_available_mean(rng):
    ds = random_masked_dataset(rng, 10, [3, 2], missing_frac=0.3)
    rec = mean_impute(ds)
    for v in range(ds.n_views):
        avail = ds.mask[:, v] == 0
        col_mean = ds.views[v][avail].mean(axis=0)
        for i in np.flatnonzero(~avail):
            assert np.allclose(rec.views[v][i], col_mean, atol=0)


def test_export_recovered_writes_views_and_provenance(tmp_path, rng):
    ds = random_masked_dataset(rng, 6, [2, 2], missing_frac=0.3)
    graph = build_transfer_graph(ds, 2)
    rec = materialize(init_completion_net(ds.dims, seed=0), ds, graph)
    paths = export_recovered(rec, tmp_path)
    assert (tmp_path / "recovered_view_0.csv").exists()
    prov = np.loadtxt(tmp_path / "provenance.csv", delimiter=",", dtype=np.int64, ndmin=2)
    assert prov.shape[0] == int(ds.mask.sum())


def test_cc_pairs_order_is_deterministic(rng):
    ds = random_masked_dataset(rng, 8, [2, 2], missing_frac=0.4)
    graph = build_transfer_graph(ds, 2)
    a1, j1 = cc_pairs(graph)
    a2, j2 = cc_pairs(graph)
    assert np.array_equal(a1, a2) and np.array_equal(j1, j2)
