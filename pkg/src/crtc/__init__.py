"""Incomplete multi-view clustering via cross-view relation transfer
completion and attention-fused deep embedded clustering."""

from .clustering import (
    ClusterState,
    hard_assign,
    kmeans_init,
    kmeans_labels,
    loss_mc,
    soft_assign,
    target_distribution,
)
from .completion import (
    CompletionNet,
    NonFiniteLossError,
    RecoveredDataset,
    init_completion_net,
    loss_cc,
    loss_cr,
    materialize,
    mean_impute,
    pretrain_completion,
    recover_one,
)
from .dataset import (
    DataError,
    MaskProtocol,
    MultiViewDataset,
    apply_mask_protocol,
    load_dataset,
    synth_blobs,
)
from .fusion import (
    CommonRepresentation,
    FusionNet,
    attention_fuse,
    encode,
    fuse_data,
    init_fusion_net,
    loss_mr,
    pretrain_fusion,
)
from .knn_transfer import TransferGraph, build_transfer_graph, knn_in_view, pairwise_sq_distances
from .metrics import acc, ari, nmi
from .trainer import RunReport, TrainConfig, run_ablation, run_crtc, write_report

__version__ = "0.1.0"
