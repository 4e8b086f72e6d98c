"""Command-line front door: synth, mask, train, eval, project.

A flat ``key = value`` config file (with ``#`` comments) mirrors the
training knobs; every key can also be given as a flag, and flags win.
Unknown keys are rejected with the offending line number.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .completion import NonFiniteLossError, export_recovered
from .dataset import (
    FLOAT_FMT,
    DataError,
    MaskProtocol,
    MultiViewDataset,
    apply_mask_protocol,
    load_dataset,
    save_labels,
    save_mask,
    save_views,
    synth_blobs,
)
from .knn_transfer import build_transfer_graph, default_k
from .trainer import TrainConfig, VARIANTS, _maybe_mask, run_ablation, write_report


class CliError(ValueError):
    """Bad command-line or config-file input."""


# config-file keys, their parsers, and whether the CLI exposes them directly
_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(s: str) -> bool:
    try:
        return _BOOLS[s.strip().lower()]
    except KeyError:
        raise CliError(f"expected a boolean, got {s!r}") from None


def _parse_paths(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


CONFIG_KEYS: dict[str, object] = {
    "views": _parse_paths,
    "mask": str,
    "labels": str,
    "n_clusters": int,
    "out": str,
    "variant": str,
    "seed": int,
    "k": int,
    "d": int,
    "hidden": int,
    "lr_pretrain": float,
    "lr_joint": float,
    "epochs_cr": int,
    "epochs_mr": int,
    "max_iter": int,
    "interval": int,
    "delta": float,
    "lam": float,
    "kmeans_restarts": int,
    "activation": str,
    "protocol": str,
    "p": float,
    "pure_mc": _parse_bool,
    "dump_graph": _parse_bool,
    "export_recovered": _parse_bool,
}


def parse_config_file(path) -> dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    values: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}, line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise CliError(f"{path}, line {lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except CliError:
            raise
        except ValueError:
            raise CliError(f"{path}, line {lineno}: bad value {value!r} for {key!r}") from None
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crtc",
        description="Incomplete multi-view clustering via cross-view relation "
        "transfer completion and attention-fused deep embedded clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a Gaussian blob benchmark dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--n-per-cluster", type=int, default=100, help="instances per cluster (default 100)")
    p_synth.add_argument("--clusters", type=int, default=3, help="number of clusters (default 3)")
    p_synth.add_argument("--views", type=int, default=2, help="number of views (default 2)")
    p_synth.add_argument("--dims", default="20,20", help="comma-separated per-view dims (default 20,20)")
    p_synth.add_argument("--sigma", type=float, default=0.05, help="per-view noise std (default 0.05)")
    p_synth.add_argument("--separation", type=float, default=1.0, help="latent code scale (default 1.0)")
    p_synth.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p_synth.add_argument("--protocol", choices=["missing_rate", "paired_rate"], help="also write a mask")
    p_synth.add_argument("--p", type=float, help="protocol rate for --protocol")
    p_synth.set_defaults(func=cmd_synth)

    p_mask = sub.add_parser("mask", help="generate a mask file for existing views")
    p_mask.add_argument("--view", action="append", required=True, dest="views", help="view CSV (repeatable)")
    p_mask.add_argument("--protocol", choices=["missing_rate", "paired_rate"], required=True)
    p_mask.add_argument("--p", type=float, required=True, help="protocol rate in [0, 1)")
    p_mask.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p_mask.add_argument("--out", required=True, help="output mask CSV path")
    p_mask.set_defaults(func=cmd_mask)

    p_train = sub.add_parser("train", help="run training or an ablation variant")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--view", action="append", dest="views", help="view CSV (repeatable)")
    p_train.add_argument("--mask", help="mask CSV (omit for complete data)")
    p_train.add_argument("--labels", help="labels file (evaluation only)")
    p_train.add_argument("--n-clusters", type=int, dest="n_clusters", help="cluster count (inferred from labels if omitted)")
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--variant", choices=list(VARIANTS), help="pipeline variant (default full)")
    p_train.add_argument("--seed", type=int, help="master seed (default 0)")
    p_train.add_argument("--k", type=int, action="append", help="KNN size; repeat for a sweep")
    p_train.add_argument("--d", type=int, help="embedding dimension (default 10*ceil(log2 C), max 64)")
    p_train.add_argument("--hidden", type=int, help="encoder hidden width (default 500)")
    p_train.add_argument("--lr-pretrain", type=float, dest="lr_pretrain", help="pretraining learning rate (default 1e-3)")
    p_train.add_argument("--lr-joint", type=float, dest="lr_joint", help="joint-phase learning rate (default 1e-3)")
    p_train.add_argument("--epochs-cr", type=int, dest="epochs_cr", help="completion pretrain epochs (default 300)")
    p_train.add_argument("--epochs-mr", type=int, dest="epochs_mr", help="fusion pretrain epochs (default 500)")
    p_train.add_argument("--max-iter", type=int, dest="max_iter", help="joint-phase epoch cap (default 200)")
    p_train.add_argument("--interval", type=int, help="target refresh interval in epochs (default 5)")
    p_train.add_argument("--delta", type=float, help="stop when assignment churn <= delta (default 0.001)")
    p_train.add_argument("--lam", type=float, help="clustering-loss weight in the fusion update (default 0.1)")
    p_train.add_argument("--kmeans-restarts", type=int, dest="kmeans_restarts", help="k-means++ restarts (default 20)")
    p_train.add_argument("--activation", choices=["identity", "relu", "tanh"], help="recovery activation (default identity)")
    p_train.add_argument("--protocol", choices=["missing_rate", "paired_rate"], help="mask a complete dataset before training")
    p_train.add_argument("--p", type=float, action="append", help="protocol rate; repeat for a sweep")
    p_train.add_argument("--pure-mc", action="store_const", const=True, dest="pure_mc", help="joint fusion update uses only the clustering loss")
    p_train.add_argument("--dump-graph", action="store_const", const=True, dest="dump_graph", help="also write the transfer graph CSV")
    p_train.add_argument("--export-recovered", action="store_const", const=True, dest="export_recovered", help="also write recovered views + provenance")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score predicted vs true labels")
    p_eval.add_argument("--truth", required=True, help="true labels file")
    p_eval.add_argument("--pred", required=True, help="predicted assignments file")
    p_eval.set_defaults(func=cmd_eval)

    p_proj = sub.add_parser("project", help="PCA-project an embedding CSV to 2-D")
    p_proj.add_argument("--embedding", required=True, help="embedding CSV (e.g. exported h_tilde)")
    p_proj.add_argument("--assignments", help="assignments file to append as a column")
    p_proj.add_argument("--labels", help="labels file to append as a column")
    p_proj.add_argument("--out", required=True, help="output CSV path")
    p_proj.set_defaults(func=cmd_project)

    return parser


def cmd_synth(args) -> int:
    dims = [int(x) for x in str(args.dims).split(",") if x.strip()]
    ds = synth_blobs(
        n_per_cluster=args.n_per_cluster,
        n_clusters=args.clusters,
        n_views=args.views,
        dims=dims,
        sigma=args.sigma,
        seed=args.seed,
        separation=args.separation,
    )
    out = Path(args.out)
    save_views(ds, out)
    save_labels(ds.labels, out / "labels.csv")
    if args.protocol is not None:
        if args.p is None:
            raise CliError("--protocol needs --p")
        masked = apply_mask_protocol(ds, MaskProtocol(args.protocol, args.p, args.seed))
        save_mask(masked, out / "mask.csv")
    print(f"wrote {ds.n_views} views, labels{' and mask' if args.protocol else ''} to {out}")
    return 0


def cmd_mask(args) -> int:
    ds = load_dataset(args.views, n_clusters=1)
    masked = apply_mask_protocol(ds, MaskProtocol(args.protocol, args.p, args.seed))
    save_mask(masked, args.out)
    print(f"wrote mask for {ds.n_instances} x {ds.n_views} cells to {args.out}")
    return 0


def _merged_options(args) -> dict[str, object]:
    """Config-file values overridden by explicitly given flags."""
    merged = parse_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    return merged


def cmd_train(args) -> int:
    opts = _merged_options(args)
    if not opts.get("views"):
        raise CliError("no views given (use --view or the 'views' config key)")
    if not opts.get("out"):
        raise CliError("no output directory given (use --out or the 'out' config key)")
    out = Path(opts["out"])
    variant = str(opts.get("variant", "full")).lower()

    ds = load_dataset(
        opts["views"],
        mask_path=opts.get("mask"),
        labels_path=opts.get("labels"),
        n_clusters=opts.get("n_clusters"),
    )

    p_values = opts.get("p")
    if p_values is not None and not isinstance(p_values, list):
        p_values = [p_values]
    k_values = opts.get("k")
    if k_values is not None and not isinstance(k_values, list):
        k_values = [k_values]
    if p_values and opts.get("protocol") is None:
        raise CliError("--p needs --protocol (missing_rate or paired_rate)")

    seed = int(opts.get("seed", 0))
    for p in p_values or [None]:
        for k in k_values or [None]:
            protocol = None
            if p is not None:
                protocol = MaskProtocol(str(opts["protocol"]), float(p), seed)
            config = TrainConfig(
                k=k,
                d=opts.get("d"),
                hidden=int(opts.get("hidden", 500)),
                lr_pretrain=float(opts.get("lr_pretrain", 1e-3)),
                lr_joint=float(opts.get("lr_joint", 1e-3)),
                epochs_cr=int(opts.get("epochs_cr", 300)),
                epochs_mr=int(opts.get("epochs_mr", 500)),
                max_iter=int(opts.get("max_iter", 200)),
                interval=int(opts.get("interval", 5)),
                delta=float(opts.get("delta", 0.001)),
                lam=float(opts.get("lam", 0.1)),
                kmeans_restarts=int(opts.get("kmeans_restarts", 20)),
                seed=seed,
                activation=str(opts.get("activation", "identity")),
                protocol=protocol,
                pure_mc=bool(opts.get("pure_mc", False)),
            )
            suffix = ""
            if p is not None and len(p_values) > 1:
                suffix += f"_p{p:g}"
            if k is not None and len(k_values) > 1:
                suffix += f"_k{k}"
            report = run_ablation(ds, config, variant)
            report.config["views"] = ",".join(str(v) for v in opts["views"])
            for key in ("mask", "labels"):
                if opts.get(key):
                    report.config[key] = str(opts[key])
            report.config["n_clusters"] = ds.n_clusters
            report.config["out"] = str(out)
            report.config["variant"] = variant

            write_report(report, out / f"report{suffix}.txt")
            save_labels(report.assignments, out / f"assignments{suffix}.csv")
            if report.h_tilde is not None:
                np.savetxt(out / f"h_tilde{suffix}.csv", report.h_tilde, fmt=FLOAT_FMT, delimiter=",")
            if report.alpha is not None:
                np.savetxt(out / f"alpha{suffix}.csv", report.alpha, fmt=FLOAT_FMT, delimiter=",")
            if report.q is not None:
                np.savetxt(out / f"q{suffix}.csv", report.q, fmt=FLOAT_FMT, delimiter=",")
            if report.traces:
                with open(out / f"losses{suffix}.csv", "w") as fh:
                    for name in sorted(report.traces):
                        for epoch, value in enumerate(report.traces[name]):
                            fh.write(f"{name},{epoch},{value:.17g}\n")
            if report.recovered is not None and bool(opts.get("export_recovered", False)):
                export_recovered(report.recovered, out / f"recovered{suffix}")
            if bool(opts.get("dump_graph", False)):
                masked = _maybe_mask(ds, config)
                k_eff = k if k is not None else default_k(ds.n_views)
                build_transfer_graph(masked, k_eff).dump_csv(out / f"transfer_graph{suffix}.csv")
            scores = ""
            if report.acc is not None:
                scores = f" acc={report.acc:.4f} nmi={report.nmi:.4f} ari={report.ari:.4f}"
            print(f"[{variant}{suffix or ''}] stop={report.stop_reason}{scores}")
    return 0


def cmd_eval(args) -> int:
    truth = np.loadtxt(args.truth, dtype=np.int64).reshape(-1)
    pred = np.loadtxt(args.pred, dtype=np.int64).reshape(-1)
    print(f"acc = {metrics.acc(truth, pred):.6f}")
    print(f"nmi = {metrics.nmi(truth, pred):.6f}")
    print(f"ari = {metrics.ari(truth, pred):.6f}")
    return 0


def pca_project(x: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Center and project onto the top principal components (SVD route).

    Component signs are fixed so each one's largest-magnitude loading is
    positive, making the output deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:n_components]
    signs = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    return centered @ comps.T


def cmd_project(args) -> int:
    path = Path(args.embedding)
    if not path.exists():
        raise CliError(f"embedding file not found: {path}")
    h = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    coords = pca_project(h, n_components=2)
    columns = [coords[:, 0], coords[:, 1]]
    fmts = [FLOAT_FMT, FLOAT_FMT]
    for opt in (args.assignments, args.labels):
        if opt:
            columns.append(np.loadtxt(opt, dtype=np.int64).reshape(-1))
            fmts.append("%d")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, np.column_stack(columns), fmt=fmts, delimiter=",")
    print(f"wrote {coords.shape[0]} projected rows to {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (CliError, DataError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
