"""Command-line surface for the retrieval pipeline.

Subcommands: ``synth`` (generate a planted dataset), ``build-graph``,
``train``, ``rank``, ``eval``, ``gradcheck``. Exit codes: 0 success,
1 validation error, 2 numerical failure. Every command's output is a pure
function of its inputs, flags and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bm25, config as config_mod, gcg, gradcheck, rank_eval, synth, trainer
from .corpus import Split, load_charges, load_corpus, load_labels
from .errors import NumericalError, ValidationError


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexgraph",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_synth)

    p_graph = sub.add_parser("build-graph", help="build and export the case graph")
    p_graph.add_argument("--corpus", required=True)
    p_graph.add_argument("--charges", required=True)
    p_graph.add_argument("--embeddings", help="external embedding file")
    p_graph.add_argument("--split", choices=["train", "test"], default="train")
    p_graph.add_argument("--out", required=True, help="graph TSV output path")
    _add_config_flags(p_graph)

    p_train = sub.add_parser("train", help="train on the configured corpus")
    p_train.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_train)

    p_rank = sub.add_parser("rank", help="rank candidates for every query")
    p_rank.add_argument("--checkpoint", required=True)
    p_rank.add_argument("--corpus", required=True)
    p_rank.add_argument("--charges", required=True)
    p_rank.add_argument("--embeddings", help="external embedding file")
    p_rank.add_argument("--two-stage", action="store_true")
    p_rank.add_argument("--first-k", type=int, default=10)
    p_rank.add_argument("--out", required=True, help="run file output path")

    p_eval = sub.add_parser("eval", help="score a run file against labels")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--out", required=True, help="report JSON output path")

    p_grad = sub.add_parser("gradcheck", help="verify gradients on a random graph")
    p_grad.add_argument("--seed", type=int, default=1)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _cmd_synth(args) -> int:
    cfg = config_mod.resolve(args.config, args.overrides)
    spec = config_mod.build_synth_spec(cfg, seed=args.seed)
    paths = synth.write_dataset(spec, args.out)
    print(json.dumps({name: str(p) for name, p in sorted(paths.items())}))
    return 0


def _cmd_build_graph(args) -> int:
    cfg = config_mod.resolve(args.config, args.overrides)
    train_config = config_mod.build_train_config(cfg)
    corpus = load_corpus(args.corpus, Split(args.split))
    charges = load_charges(args.charges)
    features = gcg.assemble_features(
        corpus,
        charges,
        embedding_file=args.embeddings,
        dim=train_config.gnn.dim,
        seed=train_config.seed,
    )
    index = bm25.build_index(corpus)
    neighbors = bm25.pairwise_topk(index, train_config.gcg.k)
    graph = gcg.build_graph(corpus, charges, features, neighbors, train_config.gcg)
    gcg.export_graph(graph, corpus, charges, args.out)
    case_feats = features.case_features
    stats = {
        "cases": graph.n,
        "charges": graph.m,
        "case_edges": int(graph.a_case.sum() // 2),
        "charge_edges": int(graph.a_charge.sum() // 2),
        "bridge_edges": int(graph.a_bridge.sum()),
        "feature_dim": features.dim,
        "feature_source": features.source.value,
        "zero_feature_rows": int((np.linalg.norm(case_feats, axis=1) == 0).sum()),
    }
    print(json.dumps(stats, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = config_mod.resolve(args.config, args.overrides)
    for key in ("data.train_corpus", "data.train_labels", "data.charges"):
        if not cfg[key]:
            raise ValidationError(f"config key {key} is required for train")
    train_config = config_mod.build_train_config(cfg)
    corpus = load_corpus(cfg["data.train_corpus"], Split.TRAIN)
    labels = load_labels(cfg["data.train_labels"], corpus)
    charges = load_charges(cfg["data.charges"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = trainer.train(
        corpus,
        charges,
        labels,
        train_config,
        log_path=out_dir / "train_log.jsonl",
        checkpoint_path=out_dir / "checkpoint.clnk",
    )
    last = artifacts.log[-1] if artifacts.log else {"total": None}
    print(
        json.dumps(
            {
                "checkpoint": str(out_dir / "checkpoint.clnk"),
                "epochs": artifacts.epochs_run,
                "final_total_loss": last["total"],
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_rank(args) -> int:
    checkpoint = trainer.load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, Split.TEST)
    charges = load_charges(args.charges)
    embeddings = rank_eval.embed_all(
        checkpoint, corpus, charges, embedding_file=args.embeddings
    )
    queries = [corpus.docs[i].id for i in corpus.query_indices()]
    if args.two_stage:
        index = bm25.build_index(corpus)
        lists = [
            rank_eval.two_stage_rank(q, index, embeddings, first_k=args.first_k)
            for q in queries
        ]
    else:
        lists = [rank_eval.rank(q, embeddings) for q in queries]
    rank_eval.write_run_file(lists, args.out)
    print(json.dumps({"run": args.out, "queries": len(lists)}, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    lists = rank_eval.read_run_file(args.run)
    labels = load_labels(args.labels)
    report = rank_eval.evaluate(lists, labels)
    rank_eval.write_report(report, args.out)
    print(rank_eval.summary_line(report))
    return 0


def _cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    max_err = gradcheck.full_loss_gradcheck(args.seed)
    elapsed = time.perf_counter() - start
    print(
        json.dumps(
            {"max_relative_error": max_err, "seconds": round(elapsed, 3)},
            sort_keys=True,
        )
    )
    if not max_err < args.tolerance:
        raise NumericalError(
            f"gradient check failed: {max_err:.3e} >= {args.tolerance:.0e}"
        )
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "build-graph": _cmd_build_graph,
    "train": _cmd_train,
    "rank": _cmd_rank,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
