"""View-specific encoders/decoders and the attention fusion layer.

Each view is embedded into a shared d-dimensional space by a two-layer
encoder (relu hidden layer, linear output). Per instance, the view
embeddings are fused by attention: scores are scaled dot products between a
learned per-view projection of the embedding and the unweighted view mean,
softmaxed over views. Decoders reconstruct every view from the fused
representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .checks import check_row_stochastic
from .completion import NonFiniteLossError
from .diffcore import ParamStore, Tensor


@dataclass
class FusionNet:
    """Per-view encoder/decoder stacks plus attention projections.

    ``uniform_attention=True`` degrades fusion to the plain view mean
    (alpha = 1/V), used by the no-attention ablation.
    """

    store: ParamStore
    dims: tuple[int, ...]
    d: int
    hidden: int
    tau: float
    uniform_attention: bool = False

    def param_names(self) -> list[str]:
        names = []
        for v in range(len(self.dims)):
            names += [f"enc{v}.w0", f"enc{v}.b0", f"enc{v}.w1", f"enc{v}.b1"]
            names += [f"dec{v}.w0", f"dec{v}.b0", f"dec{v}.w1", f"dec{v}.b1"]
            names += [f"att{v}.w"]
        return names


@dataclass
class CommonRepresentation:
    """Fused embedding H (N x d) and the attention weights alpha (N x V)."""

    h_tilde: np.ndarray
    alpha: np.ndarray


def default_embedding_dim(n_clusters: int) -> int:
    """10 * ceil(log2 C), capped at 64."""
    return min(64, 10 * max(1, math.ceil(math.log2(max(2, n_clusters)))))


def init_fusion_net(
    dims,
    d: int,
    hidden: int = 500,
    seed: int = 0,
    uniform_attention: bool = False,
) -> FusionNet:
    rng = np.random.default_rng([seed, 0xF0])
    store = ParamStore()
    dims = tuple(int(x) for x in dims)
    for v, dv in enumerate(dims):
        store.add(f"enc{v}.w0", dc.glorot_uniform(rng, dv, hidden))
        store.add(f"enc{v}.b0", np.zeros(hidden))
        store.add(f"enc{v}.w1", dc.glorot_uniform(rng, hidden, d))
        store.add(f"enc{v}.b1", np.zeros(d))
        store.add(f"dec{v}.w0", dc.glorot_uniform(rng, d, hidden))
        store.add(f"dec{v}.b0", np.zeros(hidden))
        store.add(f"dec{v}.w1", dc.glorot_uniform(rng, hidden, dv))
        store.add(f"dec{v}.b1", np.zeros(dv))
        store.add(f"att{v}.w", dc.glorot_uniform(rng, d, d))
    return FusionNet(
        store=store,
        dims=dims,
        d=d,
        hidden=hidden,
        tau=math.sqrt(d),
        uniform_attention=uniform_attention,
    )


def _views_of(data) -> list[np.ndarray]:
    return data if isinstance(data, (list, tuple)) else data.views


def _encode_graph(net: FusionNet, params, xs: list[Tensor]) -> list[Tensor]:
    hs = []
    for v, x in enumerate(xs):
        h0 = dc.relu(dc.add(dc.matmul(x, params[f"enc{v}.w0"]), params[f"enc{v}.b0"]))
        hs.append(dc.add(dc.matmul(h0, params[f"enc{v}.w1"]), params[f"enc{v}.b1"]))
    return hs


def _fuse_graph(net: FusionNet, params, hs: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Attention-weighted fusion; returns (h_tilde, alpha)."""
    n_views = len(hs)
    n = hs[0].shape[0]
    if net.uniform_attention:
        alpha = Tensor(np.full((n, n_views), 1.0 / n_views))
    else:
        h_plus = hs[0]
        for h in hs[1:]:
            h_plus = dc.add(h_plus, h)
        h_plus = dc.mul(h_plus, 1.0 / n_views)
        scores = []
        for v, h in enumerate(hs):
            proj = dc.matmul(h, params[f"att{v}.w"])
            scores.append(dc.sum_axis(dc.mul(proj, h_plus), axis=1))
        alpha = dc.softmax_rows(dc.mul(dc.stack_cols(scores), 1.0 / net.tau))
    h_tilde = dc.mul(dc.take_col(alpha, 0), hs[0])
    for v in range(1, n_views):
        h_tilde = dc.add(h_tilde, dc.mul(dc.take_col(alpha, v), hs[v]))
    return h_tilde, alpha


def _decode_graph(net: FusionNet, params, h_tilde: Tensor) -> list[Tensor]:
    outs = []
    for v in range(len(net.dims)):
        h0 = dc.relu(dc.add(dc.matmul(h_tilde, params[f"dec{v}.w0"]), params[f"dec{v}.b0"]))
        outs.append(dc.add(dc.matmul(h0, params[f"dec{v}.w1"]), params[f"dec{v}.b1"]))
    return outs


def _loss_mr_graph(net: FusionNet, params, xs: list[Tensor], h_tilde: Tensor) -> Tensor:
    total = Tensor(0.0)
    for x, recon in zip(xs, _decode_graph(net, params, h_tilde)):
        total = dc.add(total, dc.sum_sq(dc.sub(x, recon)))
    return total


def encode(net: FusionNet, data) -> list[np.ndarray]:
    """Row-wise view embeddings g_v(x) for every view."""
    params = net.store.tensors(trainable=False)
    xs = [Tensor(x) for x in _views_of(data)]
    return [h.data for h in _encode_graph(net, params, xs)]


def attention_fuse(net: FusionNet, embeddings) -> CommonRepresentation:
    """Fuse per-view embeddings into the common representation."""
    params = net.store.tensors(trainable=False)
    hs = [Tensor(h) for h in embeddings]
    h_tilde, alpha = _fuse_graph(net, params, hs)
    return CommonRepresentation(h_tilde=h_tilde.data, alpha=alpha.data)


def fuse_data(net: FusionNet, data) -> CommonRepresentation:
    """Encode then fuse in one call."""
    return attention_fuse(net, encode(net, data))


def loss_mr(net: FusionNet, data, h_tilde: np.ndarray) -> float:
    """Reconstruction loss: summed squared error of every view's decode,
    over all instances (recovered cells included)."""
    params = net.store.tensors(trainable=False)
    xs = [Tensor(x) for x in _views_of(data)]
    return _loss_mr_graph(net, params, xs, Tensor(h_tilde)).item()


def pretrain_fusion(net: FusionNet, data, epochs: int, lr: float) -> list[float]:
    """Full-batch Adam on the reconstruction loss; returns the loss trace."""
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    xs_const = [Tensor(x) for x in _views_of(data)]
    names = net.param_names()
    trace = []
    for epoch in range(epochs):
        params = net.store.tensors(trainable=True, names=names)
        try:
            hs = _encode_graph(net, params, xs_const)
            h_tilde, alpha = _fuse_graph(net, params, hs)
            check_row_stochastic("alpha", alpha.data, tol=1e-12)
            loss = _loss_mr_graph(net, params, xs_const, h_tilde)
            trace.append(loss.item())
            grads = dc.gradients(loss, params)
            dc.adam_step(net.store, grads, lr=lr)
        except dc.NonFiniteError as err:
            raise NonFiniteLossError(f"fusion pretraining, epoch {epoch}: {err}") from err
    return trace
