"""End-to-end training: pretraining, initialization, the alternating joint
loop with its interval-based target refresh and stopping rule, plus the
ablation variants used for comparisons.

Joint phase, per epoch: the completion parameters take one Adam step on the
assignment-consistency loss (gradients flow through recovery, encoding and
fusion into the recovery weights only), then the fusion parameters and
cluster centers take one Adam step on reconstruction + lam * clustering
loss. Recovered data, the target distribution, and the stop check refresh
every ``interval`` epochs.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import metrics
from .checks import check_nonnegative, check_row_stochastic
from .clustering import (
    _kl_graph,
    _student_t_graph,
    hard_assign,
    kmeans_init,
    kmeans_labels,
    soft_assign,
    target_distribution,
)
from .completion import (
    CompletionBatch,
    NonFiniteLossError,
    RecoveredDataset,
    _loss_cc_graph,
    _recover_view,
    cc_pairs,
    init_completion_net,
    materialize,
    mean_impute,
    pretrain_completion,
)
from .dataset import MaskProtocol, MultiViewDataset, apply_mask_protocol, zero_filled_views
from .diffcore import Tensor
from .fusion import (
    _encode_graph,
    _fuse_graph,
    _loss_mr_graph,
    default_embedding_dim,
    fuse_data,
    init_fusion_net,
    pretrain_fusion,
)
from .knn_transfer import build_transfer_graph, default_k

VARIANTS = ("full", "bsv", "concat", "rec_bsv", "rec_concat", "ave_mfc", "crtc_wjd", "crtc_waf")
_VARIANT_ALIASES = {v.replace("_", ""): v for v in VARIANTS}


@dataclass
class TrainConfig:
    """All knobs of a run; None for k and d means dataset-derived defaults."""

    k: int | None = None
    d: int | None = None
    hidden: int = 500
    lr_pretrain: float = 1e-3
    lr_joint: float = 1e-3
    epochs_cr: int = 300
    epochs_mr: int = 500
    max_iter: int = 200
    interval: int = 5
    delta: float = 0.001
    lam: float = 0.1
    kmeans_restarts: int = 20
    seed: int = 0
    activation: str = "identity"
    protocol: MaskProtocol | None = None
    pure_mc: bool = False

    def __post_init__(self) -> None:
        for name in ("hidden", "epochs_cr", "epochs_mr", "interval", "kmeans_restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")
        for name in ("k", "d"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"{name} must be positive when given")

    def echo(self) -> dict[str, object]:
        out = asdict(self)
        proto = out.pop("protocol")
        if proto is None:
            out["protocol"] = "none"
        else:
            out["protocol"] = proto["kind"]
            out["protocol_p"] = proto["p"]
            out["protocol_seed"] = proto["seed"]
        return out


@dataclass
class RunReport:
    """Everything one experiment produced, ready for serialization."""

    config: dict[str, object]
    variant: str
    traces: dict[str, list[float]]
    assignments: np.ndarray
    acc: float | None
    nmi: float | None
    ari: float | None
    wall_time_sec: float
    stop_reason: str
    phases: list[str]
    h_tilde: np.ndarray | None = None
    alpha: np.ndarray | None = None
    q: np.ndarray | None = None
    recovered: "RecoveredDataset | None" = None
    extras: dict[str, float] = field(default_factory=dict)


def _score(report: RunReport, ds: MultiViewDataset) -> None:
    if ds.labels is not None:
        report.acc = metrics.acc(ds.labels, report.assignments)
        report.nmi = metrics.nmi(ds.labels, report.assignments)
        report.ari = metrics.ari(ds.labels, report.assignments)


def _maybe_mask(ds: MultiViewDataset, config: TrainConfig) -> MultiViewDataset:
    if config.protocol is not None and ds.is_complete():
        return apply_mask_protocol(ds, config.protocol)
    return ds


def _resolve(ds: MultiViewDataset, config: TrainConfig) -> tuple[int, int]:
    k = config.k if config.k is not None else default_k(ds.n_views)
    d = config.d if config.d is not None else default_embedding_dim(ds.n_clusters)
    return k, d


def run_crtc(ds: MultiViewDataset, config: TrainConfig) -> RunReport:
    """The full pipeline; see the module docstring for the joint phase."""
    return _run_pipeline(ds, config, variant="full", recovery="transfer",
                         joint=True, uniform_attention=False)


def run_ablation(ds: MultiViewDataset, config: TrainConfig, variant: str) -> RunReport:
    """One of the comparison variants; ``full`` delegates to run_crtc.

    Names are case-insensitive and separator-tolerant (``RecBSV``,
    ``rec_bsv`` and ``rec-bsv`` all work).
    """
    normalized = variant.lower().replace("_", "").replace("-", "")
    if normalized not in _VARIANT_ALIASES:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    variant = _VARIANT_ALIASES[normalized]
    if variant == "full":
        return run_crtc(ds, config)
    if variant in ("bsv", "concat", "rec_bsv", "rec_concat"):
        return _run_kmeans_variant(ds, config, variant)
    return _run_pipeline(
        ds,
        config,
        variant=variant,
        recovery="mean" if variant == "ave_mfc" else "transfer",
        joint=variant != "crtc_wjd",
        uniform_attention=variant == "crtc_waf",
    )


def _run_kmeans_variant(ds: MultiViewDataset, config: TrainConfig, variant: str) -> RunReport:
    t0 = time.perf_counter()
    ds = _maybe_mask(ds, config)
    k, _ = _resolve(ds, config)
    phases = []
    traces: dict[str, list[float]] = {}
    extras: dict[str, float] = {}

    recovered = None
    if variant.startswith("rec_"):
        phases += ["build_graph", "pretrain_completion", "materialize"]
        graph = build_transfer_graph(ds, k)
        comp = init_completion_net(ds.dims, config.activation, seed=config.seed)
        traces["pretrain_cr"] = pretrain_completion(comp, ds, graph, config.epochs_cr, config.lr_pretrain)
        recovered = materialize(comp, ds, graph)
        views = recovered.views
    else:
        phases.append("zero_fill")
        views = zero_filled_views(ds)

    base = variant.removeprefix("rec_")
    if base == "bsv":
        if ds.labels is None:
            raise ValueError("bsv needs labels to select the best view")
        phases.append("kmeans_per_view")
        best_acc, assignments = -1.0, None
        for v, mat in enumerate(views):
            labels_v = kmeans_labels(mat, ds.n_clusters, config.kmeans_restarts, config.seed)
            acc_v = metrics.acc(ds.labels, labels_v)
            extras[f"view{v}_acc"] = acc_v
            if acc_v > best_acc:
                best_acc, assignments = acc_v, labels_v
    else:
        phases.append("kmeans_concat")
        assignments = kmeans_labels(np.hstack(views), ds.n_clusters, config.kmeans_restarts, config.seed)

    phases.append("finalize")
    report = RunReport(
        config=config.echo(),
        variant=variant,
        traces=traces,
        assignments=assignments,
        acc=None,
        nmi=None,
        ari=None,
        wall_time_sec=time.perf_counter() - t0,
        stop_reason="kmeans",
        phases=phases,
        recovered=recovered,
        extras=extras,
    )
    _score(report, ds)
    return report


def _run_pipeline(
    ds: MultiViewDataset,
    config: TrainConfig,
    variant: str,
    recovery: str,
    joint: bool,
    uniform_attention: bool,
) -> RunReport:
    t0 = time.perf_counter()
    ds = _maybe_mask(ds, config)
    if ds.n_clusters < 2:
        raise ValueError("training needs n_clusters >= 2")
    k, d = _resolve(ds, config)
    phases: list[str] = []
    traces: dict[str, list[float]] = {}

    use_transfer = recovery == "transfer"
    graph = None
    comp = None
    if use_transfer:
        phases.append("build_graph")
        graph = build_transfer_graph(ds, k)
        comp = init_completion_net(ds.dims, config.activation, seed=config.seed)
        phases.append("pretrain_completion")
        traces["pretrain_cr"] = pretrain_completion(comp, ds, graph, config.epochs_cr, config.lr_pretrain)
        phases.append("materialize")
        rec = materialize(comp, ds, graph)
    else:
        phases.append("mean_impute")
        rec = mean_impute(ds)

    fus = init_fusion_net(ds.dims, d, hidden=config.hidden, seed=config.seed,
                          uniform_attention=uniform_attention)
    phases.append("pretrain_fusion")
    traces["pretrain_mr"] = pretrain_fusion(fus, rec, config.epochs_mr, config.lr_pretrain)

    phases.append("kmeans_init")
    common = fuse_data(fus, rec)
    centers = kmeans_init(common.h_tilde, ds.n_clusters, config.kmeans_restarts, config.seed)
    fus.store.add("centers", centers)

    stop_reason = "no_joint"
    if joint:
        phases.append("joint_loop")
        stop_reason = _joint_loop(ds, config, comp, fus, graph, rec, traces, use_transfer)

    phases.append("finalize")
    if use_transfer:
        rec = materialize(comp, ds, graph)
    common = fuse_data(fus, rec)
    q = soft_assign(common.h_tilde, fus.store["centers"])
    check_row_stochastic("Q", q, tol=1e-9)
    assignments = hard_assign(q)

    report = RunReport(
        config=config.echo(),
        variant=variant,
        traces=traces,
        assignments=assignments,
        acc=None,
        nmi=None,
        ari=None,
        wall_time_sec=time.perf_counter() - t0,
        stop_reason=stop_reason,
        phases=phases,
        h_tilde=common.h_tilde,
        alpha=common.alpha,
        q=q,
        recovered=rec,
    )
    _score(report, ds)
    return report


def _joint_loop(ds, config, comp, fus, graph, rec, traces, use_transfer) -> str:
    """Alternating optimization with interval refresh; returns stop reason."""
    n = ds.n_instances
    comp_updates = use_transfer and len(graph) > 0
    if comp_updates:
        batch = CompletionBatch(ds, graph)
        a_rows, j_rows = cc_pairs(graph)
        comp_names = comp.param_names()
    fus_names = fus.param_names() + ["centers"]

    for name in ("joint_cc", "joint_mr", "joint_mc", "joint_total"):
        traces[name] = []

    rec_consts = [Tensor(x) for x in rec.views]
    p = None
    r = None
    for it in range(config.max_iter):
        if it % config.interval == 0:
            if use_transfer:
                rec = materialize(comp, ds, graph)
                rec_consts = [Tensor(x) for x in rec.views]
            common = fuse_data(fus, rec)
            q = soft_assign(common.h_tilde, fus.store["centers"])
            p = target_distribution(q)
            check_row_stochastic("Q", q, tol=1e-9)
            check_row_stochastic("P", p, tol=1e-9)
            r_new = hard_assign(q)
            if it > 0 and float(np.mean(r_new != r)) <= config.delta:
                return "delta"
            r = r_new

        # completion step: assignment consistency drives the recovery weights
        if comp_updates:
            try:
                comp_params = comp.store.tensors(trainable=True, names=comp_names)
                fus_consts = fus.store.tensors(trainable=False)
                xs = []
                for v in range(ds.n_views):
                    if v in batch.rows:
                        rec_v = _recover_view(comp, comp_params, batch, v)
                        xs.append(dc.place_rows(ds.views[v], batch.rows[v], rec_v))
                    else:
                        xs.append(rec_consts[v])
                hs = _encode_graph(fus, fus_consts, xs)
                h_tilde, _ = _fuse_graph(fus, fus_consts, hs)
                q_t = _student_t_graph(h_tilde, fus_consts["centers"])
                l_cc = _loss_cc_graph(q_t, a_rows, j_rows)
                check_nonnegative("L_cc", l_cc.item())
                traces["joint_cc"].append(l_cc.item())
                dc.adam_step(comp.store, dc.gradients(l_cc, comp_params), lr=config.lr_joint)
            except dc.NonFiniteError as err:
                raise NonFiniteLossError(f"joint epoch {it}, completion step: {err}") from err
        else:
            traces["joint_cc"].append(0.0)

        # fusion step: reconstruction plus weighted clustering loss
        try:
            fus_params = fus.store.tensors(trainable=True, names=fus_names)
            hs = _encode_graph(fus, fus_params, rec_consts)
            h_tilde, alpha = _fuse_graph(fus, fus_params, hs)
            check_row_stochastic("alpha", alpha.data, tol=1e-12)
            q_t = _student_t_graph(h_tilde, fus_params["centers"])
            check_row_stochastic("Q", q_t.data, tol=1e-9)
            l_mr = _loss_mr_graph(fus, fus_params, rec_consts, h_tilde)
            l_mc = _kl_graph(p, q_t)
            check_nonnegative("L_mc", l_mc.item())
            total = l_mc if config.pure_mc else dc.add(l_mr, dc.mul(l_mc, config.lam))
            traces["joint_mr"].append(l_mr.item())
            traces["joint_mc"].append(l_mc.item())
            traces["joint_total"].append(total.item())
            dc.adam_step(fus.store, dc.gradients(total, fus_params), lr=config.lr_joint)
        except dc.NonFiniteError as err:
            raise NonFiniteLossError(f"joint epoch {it}, fusion step: {err}") from err

    return "max_iter"


# ---------------------------------------------------------------------------
# report serialization


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def format_report(report: RunReport) -> str:
    """Structured text: key-value sections plus CSV blocks; byte-stable for
    identical runs except the wall_time_sec line."""
    lines = ["[config]"]
    for key in sorted(report.config):
        lines.append(f"{key} = {_fmt(report.config[key])}")
    lines.append("")
    lines.append("[result]")
    lines.append(f"variant = {report.variant}")
    lines.append(f"stop_reason = {report.stop_reason}")
    lines.append(f"n_instances = {len(report.assignments)}")
    for name in ("acc", "nmi", "ari"):
        value = getattr(report, name)
        if value is not None:
            lines.append(f"{name} = {_fmt(value)}")
    lines.append(f"wall_time_sec = {_fmt(report.wall_time_sec)}")
    if report.extras:
        lines.append("")
        lines.append("[extras]")
        for key in sorted(report.extras):
            lines.append(f"{key} = {_fmt(report.extras[key])}")
    lines.append("")
    lines.append("[phases]")
    lines.extend(report.phases)
    for name in sorted(report.traces):
        lines.append("")
        lines.append(f"[trace {name}]")
        lines.extend(f"{i},{_fmt(v)}" for i, v in enumerate(report.traces[name]))
    lines.append("")
    lines.append("[assignments]")
    lines.extend(str(int(a)) for a in report.assignments)
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report))
    return path
