"""Command-line pipeline: ingest -> graph -> embed -> eval / train, plus simulate, sweep, synth.

Reports go to stdout, progress and warnings to stderr.  Every subcommand
takes ``--seed`` (default 123) and is deterministic given its flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

DEFAULT_SEED = 123
SWEEP_ALPHAS = (0.0, 0.3, 0.5, 0.7, 1.0)
EMBED_METHODS = ("leporid", "le", "svd", "random")


class CLIError(Exception):
    pass


# ----------------------------------------------------------------- arg types

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def unit_float(text: str) -> float:
    value = nonneg_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _list_of(conv):
    def parse(text: str):
        parts = [p for p in text.split(",") if p.strip()]
        if not parts:
            raise argparse.ArgumentTypeError("empty list")
        return [conv(p.strip()) for p in parts]
    return parse


# ----------------------------------------------------------------- helpers

def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _ext(fmt: str) -> str:
    return "tsv" if fmt == "tsv" else "lepo"


def _load_split(path):
    from .interactions import load_split
    if not Path(path).is_dir():
        raise CLIError(f"{path}: not a split directory (run `ingest` first)")
    return load_split(path)


def _graphs(split, K: int, graph_dir=None):
    """User and item graphs: read from ``graph_dir`` if given, else built from train."""
    from .simgraph import knn_graph_from_log, read_edge_list
    if graph_dir is not None:
        gd = Path(graph_dir)
        return (read_edge_list(gd / "user_graph.tsv", split.n_users),
                read_edge_list(gd / "item_graph.tsv", split.n_items))
    return knn_graph_from_log(split.train, K, "user"), knn_graph_from_log(split.train, K, "item")


def _embed_pair(split, method: str, dim: int, alpha: float, normalized: bool, K: int, seed: int,
                skip_trivial: bool, graph_dir=None):
    from . import embeddings as em
    if method == "svd":
        return em.svd_embed(split.train, dim, seed)
    if method == "random":
        return (em.random_embed(split.n_users, dim, seed, split.user_ids),
                em.random_embed(split.n_items, dim, seed + 1, split.item_ids))
    Wu, Wi = _graphs(split, K, graph_dir)
    out = []
    for W, ids in ((Wu, split.user_ids), (Wi, split.item_ids)):
        if method == "le":
            out.append(em.le_embed(W, dim, normalized, seed, skip_trivial=skip_trivial, entity_ids=ids, K=K))
        else:
            out.append(em.leporid_embed(W, dim, alpha, normalized, seed, skip_trivial=skip_trivial,
                                        entity_ids=ids, K=K))
    return tuple(out)


def _check_ids(emb, ids, what):
    if tuple(emb.entity_ids) != tuple(ids):
        raise CLIError(f"{what} embedding ids do not match the split's {what} ids")


# ----------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    from .interactions import filter_min_activity, load_interactions, save_split, temporal_split
    log = load_interactions(args.input, has_header=args.header)
    filtered = filter_min_activity(log, args.min_count)
    split = temporal_split(filtered)
    save_split(split, _out_dir(args.out))
    print("stage\tevents\tusers\titems")
    for name in ("train", "validation", "test"):
        part = getattr(split, name)
        print(f"{name}\t{len(part)}\t{split.n_users}\t{split.n_items}")
    print(f"dropped {len(log) - len(filtered)} of {len(log)} events by min-count {args.min_count}",
          file=sys.stderr)
    return 0


def cmd_graph(args) -> int:
    from .simgraph import degrees, write_edge_list
    split = _load_split(args.split)
    out = _out_dir(args.out)
    print("side\tnodes\tedges\td_min\td_max")
    for side, W in zip(("user", "item"), _graphs(split, args.k)):
        write_edge_list(W, out / f"{side}_graph.tsv")
        d = degrees(W).d
        print(f"{side}\t{W.n}\t{len(W.edges()[0])}\t{d.min():.6g}\t{d.max():.6g}")
    return 0


def cmd_embed(args) -> int:
    from .embeddings import save_embeddings
    split = _load_split(args.split)
    method = args.method
    if method is None:
        method = "leporid"
    if args.alpha is not None and method != "leporid":
        raise CLIError("--alpha only applies to --method leporid")
    alpha = 0.5 if args.alpha is None else args.alpha
    users, items = _embed_pair(split, method, args.dim, alpha, args.variant == "normalized", args.k,
                               args.seed, args.skip_trivial, args.graph_dir)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ext = _ext(args.format)
    for side, emb in (("users", users), ("items", items)):
        path = Path(f"{prefix}.{side}.{ext}")
        save_embeddings(emb, path, args.format)
        print(f"{side}\t{path}\t{emb.n}\t{emb.dim}")
    print(json.dumps(users.provenance, sort_keys=True), file=sys.stderr)
    return 0


def _recommender(args, split):
    from .embeddings import load_embeddings
    from .evalharness import EmbeddingNN, make_recommender
    if args.model != "embedding":
        return make_recommender(args.model, k=args.knn_k) if args.model in ("userknn", "itemknn") \
            else make_recommender(args.model)
    if args.item_emb is None:
        raise CLIError("--model embedding needs --item-emb (and --user-emb unless --user-repr item_mean)")
    items = load_embeddings(args.item_emb)
    _check_ids(items, split.item_ids, "item")
    users = None
    if args.user_emb is not None:
        users = load_embeddings(args.user_emb)
        _check_ids(users, split.user_ids, "user")
    return EmbeddingNN(users, items, args.user_repr)


def _emit_report(report, tsv_path=None):
    sys.stdout.write(report.to_table())
    if tsv_path:
        Path(tsv_path).write_text(report.to_tsv(), encoding="utf-8")


def cmd_eval(args) -> int:
    from .evalharness import evaluate
    split = _load_split(args.split)
    rec = _recommender(args, split)
    report = evaluate(rec, split, args.cutoffs, args.tail_fraction, args.per_event, args.stage,
                      label=args.label or args.model)
    _emit_report(report, args.tsv)
    return 0


def cmd_train(args) -> int:
    from .dlr2 import DLR2Recommender, TrainConfig, save_model, train
    from .embeddings import load_embeddings
    from .evalharness import evaluate
    from .plotting import plot_loss_curve
    split = _load_split(args.split)
    if args.user_emb and args.item_emb:
        users, items = load_embeddings(args.user_emb), load_embeddings(args.item_emb)
        _check_ids(users, split.user_ids, "user")
        _check_ids(items, split.item_ids, "item")
    elif args.user_emb or args.item_emb:
        raise CLIError("give both --user-emb and --item-emb, or neither (then --init is used)")
    else:
        users, items = _embed_pair(split, args.init, args.dim, args.alpha, True, args.k, args.seed, False)
    config = TrainConfig(margin_s=args.margin_s, margin_g=args.margin_g, w_s=args.w_s, w_g=args.w_g,
                         lr=args.lr, weight_decay=args.weight_decay, steps=args.steps,
                         batch_size=args.batch_size, seed=args.seed, feature_variant=args.feature_variant,
                         user_merge=args.user_merge, history=args.history,
                         eval_every_epoch=not args.no_epoch_eval, head=args.head)
    result = train(split, users, items, config, log=sys.stderr)
    out = _out_dir(args.out)
    save_model(result.model, out / "model.lepo", {"init": users.provenance.get("method")})
    (out / "loss_curve.tsv").write_text(result.curve_tsv(), encoding="utf-8")
    plot_loss_curve(result.curve, out / "loss_curve.png")
    report = evaluate(DLR2Recommender(result.model, args.head), split, args.cutoffs, stage=args.stage,
                      label=f"dlr2-{args.head}")
    _emit_report(report, out / f"report_{args.stage}.tsv")
    return 0


def cmd_simulate(args) -> int:
    from .perturbsim import SimConfig, perturb_and_measure
    from .plotting import plot_degree_curve
    cfg = SimConfig(m0=args.m0, n=args.n, m_attach=args.m_attach, graphs=args.graphs,
                    insertions_per_node=args.insertions, embed_dim=args.dim, seed=args.seed)
    curve = perturb_and_measure(cfg, progress=sys.stderr if args.verbose else None)
    text = curve.to_tsv()
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args.out)
        (out / "degree_curve.tsv").write_text(text, encoding="utf-8")
        plot_degree_curve(curve, out / "degree_curve.png")
    return 0


def cmd_sweep(args) -> int:
    from .embeddings import leporid_embed
    from .evalharness import EmbeddingNN, evaluate
    from .plotting import plot_sweep
    from .simgraph import knn_graph_from_log
    split = _load_split(args.split)
    out = _out_dir(args.out) if args.out else None
    rows = []
    header_done = False
    for K in args.k:
        Wu = knn_graph_from_log(split.train, K, "user")
        Wi = knn_graph_from_log(split.train, K, "item")
        for alpha in args.alpha:
            users = leporid_embed(Wu, args.dim, alpha, True, args.seed, entity_ids=split.user_ids, K=K)
            items = leporid_embed(Wi, args.dim, alpha, True, args.seed, entity_ids=split.item_ids, K=K)
            report = evaluate(EmbeddingNN(users, items, args.user_repr), split, args.cutoffs,
                              stage=args.stage, label=f"alpha={alpha:g},K={K}")
            lines = report.to_tsv().splitlines()
            if not header_done:
                print("alpha\tK\t" + lines[0])
                header_done = True
            for line in lines[1:]:
                print(f"{alpha:g}\t{K}\t{line}")
            if out:
                (out / f"report_alpha{alpha:g}_K{K}.tsv").write_text(report.to_tsv(), encoding="utf-8")
            rows.append((alpha, K, report.get("hr", max(args.cutoffs))))
            print(f"alpha={alpha:g} K={K}: HR@{max(args.cutoffs)}={rows[-1][2]:.4f}", file=sys.stderr)
    if out:
        plot_sweep(rows, out / "sweep.png", "HR", max(args.cutoffs))
    return 0


def cmd_synth(args) -> int:
    from .synth import planted_clusters, write_events
    events = planted_clusters(args.clusters, args.users, args.items, args.p_in, args.p_out, args.seed)
    if args.out:
        write_events(events, args.out)
    else:
        for e in events:
            sys.stdout.write(f"{e.user}\t{e.item}\t{e.timestamp}\n")
    print(f"{len(events)} events", file=sys.stderr)
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leporid", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=positive_int, default=None, help="cap BLAS threads")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--threads", type=positive_int, default=argparse.SUPPRESS,
                       help="cap BLAS threads")
        return p

    def eval_flags(p):
        p.add_argument("--cutoffs", type=_list_of(positive_int), default=[5, 10])
        p.add_argument("--stage", choices=("validation", "test"), default="test")

    p = common(sub.add_parser("ingest", help="TSV log -> filtered temporal split"))
    p.add_argument("input")
    p.add_argument("--out", required=True, help="split directory")
    p.add_argument("--min-count", type=positive_int, default=20)
    p.add_argument("--header", action="store_true", help="skip the first line")
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("graph", help="split -> user/item Jaccard KNN graphs"))
    p.add_argument("split")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=positive_int, default=1000)
    p.set_defaults(func=cmd_graph)

    p = common(sub.add_parser("embed", help="split (+graphs) -> user and item embeddings"))
    p.add_argument("split")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.users.* and PREFIX.items.*")
    p.add_argument("--method", choices=EMBED_METHODS, default=None, help="default leporid")
    p.add_argument("--alpha", type=unit_float, default=None, help="popularity weight (default 0.5)")
    p.add_argument("--dim", type=positive_int, default=64)
    p.add_argument("--k", type=positive_int, default=1000)
    p.add_argument("--variant", choices=("normalized", "unnormalized"), default="normalized")
    p.add_argument("--skip-trivial", action="store_true")
    p.add_argument("--graph-dir", default=None, help="reuse graphs written by `graph`")
    p.add_argument("--format", choices=("binary", "tsv"), default="binary")
    p.set_defaults(func=cmd_embed)

    p = common(sub.add_parser("eval", help="evaluate a baseline or embedding recommender"))
    p.add_argument("split")
    p.add_argument("--model", choices=("toppop", "userknn", "itemknn", "embedding"), default="embedding")
    p.add_argument("--user-emb")
    p.add_argument("--item-emb")
    p.add_argument("--user-repr", choices=("embedding", "item_mean"), default="embedding")
    p.add_argument("--knn-k", type=positive_int, default=100)
    p.add_argument("--tail-fraction", type=unit_float, default=0.25)
    p.add_argument("--per-event", action="store_true")
    p.add_argument("--label", default="")
    p.add_argument("--tsv", help="also write the report as TSV")
    eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("train", help="train and evaluate the dual-loss network"))
    p.add_argument("split")
    p.add_argument("--out", required=True)
    p.add_argument("--user-emb")
    p.add_argument("--item-emb")
    p.add_argument("--init", choices=EMBED_METHODS, default="leporid",
                   help="initialiser when no embedding files are given")
    p.add_argument("--alpha", type=unit_float, default=0.5)
    p.add_argument("--dim", type=positive_int, default=64)
    p.add_argument("--k", type=positive_int, default=1000)
    p.add_argument("--steps", type=positive_int, default=2000)
    p.add_argument("--batch-size", type=positive_int, default=64)
    p.add_argument("--lr", type=nonneg_float, default=1e-3)
    p.add_argument("--weight-decay", type=nonneg_float, default=0.0)
    p.add_argument("--margin-s", type=nonneg_float, default=0.0)
    p.add_argument("--margin-g", type=nonneg_float, default=0.0)
    p.add_argument("--w-s", type=nonneg_float, default=1.0)
    p.add_argument("--w-g", type=nonneg_float, default=1.0)
    p.add_argument("--history", type=positive_int, default=5)
    p.add_argument("--feature-variant", choices=("none", "conv", "resnet"), default="resnet")
    p.add_argument("--user-merge", choices=("sequence", "concat"), default="sequence")
    p.add_argument("--head", choices=("disc", "gen"), default="disc")
    p.add_argument("--no-epoch-eval", action="store_true", help="skip per-epoch validation HR@10")
    eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("simulate", help="edge-insertion sensitivity on BA graphs"))
    p.add_argument("--m0", type=positive_int, default=10)
    p.add_argument("--n", type=positive_int, default=100)
    p.add_argument("--m-attach", type=positive_int, default=10)
    p.add_argument("--graphs", type=positive_int, default=50)
    p.add_argument("--insertions", type=positive_int, default=30)
    p.add_argument("--dim", type=positive_int, default=40)
    p.add_argument("--out", help="directory for degree_curve.tsv and degree_curve.png")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("sweep", help="grid over alpha and K with LEPORID + EmbeddingNN"))
    p.add_argument("split")
    p.add_argument("--alpha", type=_list_of(unit_float), default=list(SWEEP_ALPHAS))
    p.add_argument("--k", type=_list_of(positive_int), default=[1000])
    p.add_argument("--dim", type=positive_int, default=64)
    p.add_argument("--user-repr", choices=("embedding", "item_mean"), default="embedding")
    p.add_argument("--out", help="directory for per-cell reports and sweep.png")
    eval_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("synth", help="planted-cluster synthetic interaction log"))
    p.add_argument("--clusters", type=positive_int, default=4)
    p.add_argument("--users", type=positive_int, default=200)
    p.add_argument("--items", type=positive_int, default=200)
    p.add_argument("--p-in", type=unit_float, default=0.3)
    p.add_argument("--p-out", type=unit_float, default=0.01)
    p.add_argument("--out", help="output TSV (default stdout)")
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except (CLIError, ValueError, KeyError, OSError, RuntimeError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"leporid {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
