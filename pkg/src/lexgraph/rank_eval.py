"""Inference and evaluation: embed an unseen pool with a trained
checkpoint, rank candidates by cosine similarity, optionally re-rank the
BM25 top-k, and score runs with the cutoff-5 metric suite.

Metric definitions (binary relevance, cutoff c = 5):

* P@5, R@5: per-query precision/recall of the top-5 set, macro-averaged;
* Mi-F1: F1 of TP/FP/FN pooled over all queries at the cutoff;
* Ma-F1: harmonic mean of the macro-averaged P@5 and R@5;
* MRR@5: reciprocal rank of the first relevant hit within the top 5, else 0;
* MAP: average precision over the FULL ranking, normalized by |relevant|;
* NDCG@5: binary-gain DCG with 1-indexed ranks, over ideal DCG.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bm25, gcg, gnn
from .corpus import ChargeVocabulary, Corpus, LabelSet, Role
from .errors import ValidationError
from .trainer import Checkpoint


@dataclass(frozen=True)
class RankedList:
    query_id: str
    ranking: tuple[tuple[str, float], ...]  # (candidate id, score), scores non-increasing


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, float]
    per_query: dict[str, dict[str, float]]

    METRIC_NAMES = ("P@5", "R@5", "Mi-F1", "Ma-F1", "MRR@5", "MAP", "NDCG@5")


@dataclass(frozen=True)
class CaseEmbeddings:
    ids: list[str]
    vectors: np.ndarray  # n x d, corpus order
    roles: list[Role]

    def row(self, doc_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(doc_id)]


def embed_all(
    checkpoint: Checkpoint,
    corpus: Corpus,
    charges: ChargeVocabulary,
    gcg_config: gcg.GcgConfig | None = None,
    embedding_file: str | Path | None = None,
) -> CaseEmbeddings:
    """Build this pool's graph independently and run an eval-mode forward."""
    config = checkpoint.config
    graph_config = gcg_config or config.gcg
    features = gcg.assemble_features(
        corpus,
        charges,
        embedding_file=embedding_file
        if embedding_file is not None
        else config.embedding_file,
        dim=config.gnn.dim,
        seed=config.seed,
    )
    if features.dim != config.gnn.dim:
        raise ValidationError(
            f"feature dim {features.dim} != checkpoint dim {config.gnn.dim}"
        )
    if config.node_feat_only:
        vectors = features.case_features.astype(np.float32)
    else:
        index = bm25.build_index(corpus)
        neighbors = bm25.pairwise_topk(index, graph_config.k)
        graph = gcg.build_graph(corpus, charges, features, neighbors, graph_config)
        h = gnn.forward(
            graph, features, checkpoint.params, config.gnn, train=False,
            seed=config.seed,
        )
        vectors = h.data[: graph.n].astype(np.float32)
    return CaseEmbeddings(
        ids=list(corpus.ids),
        vectors=vectors,
        roles=[d.role for d in corpus.docs],
    )


def _cosine_to_query(embeddings: CaseEmbeddings, query_id: str,
                     candidate_ids: list[str]) -> list[tuple[str, float]]:
    vecs = embeddings.vectors.astype(np.float64)
    index = {doc_id: i for i, doc_id in enumerate(embeddings.ids)}
    q = vecs[index[query_id]]
    qn = np.linalg.norm(q)
    scored = []
    for cid in candidate_ids:
        c = vecs[index[cid]]
        cn = np.linalg.norm(c)
        if qn == 0 or cn == 0:
            s = 0.0
        else:
            s = float(np.dot(q, c) / (qn * cn))
        scored.append((cid, s))
    return scored


def rank(
    query_id: str, embeddings: CaseEmbeddings, candidate_ids: list[str] | None = None
) -> RankedList:
    """Score the full candidate pool by cosine and sort (ties: ascending id)."""
    if candidate_ids is None:
        candidate_ids = [
            i for i, r in zip(embeddings.ids, embeddings.roles)
            if r is Role.CANDIDATE and i != query_id
        ]
    scored = _cosine_to_query(embeddings, query_id, candidate_ids)
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(query_id=query_id, ranking=tuple(scored))


def two_stage_rank(
    query_id: str,
    index: bm25.Bm25Index,
    embeddings: CaseEmbeddings,
    first_k: int = 10,
) -> RankedList:
    """Re-order the BM25 top ``first_k`` candidates by embedding cosine."""
    query_pos = index._id_index[query_id]
    roles = {i: r for i, r in zip(embeddings.ids, embeddings.roles)}
    scores = bm25.score_all_by_doc(index, query_pos)
    skip = np.zeros(index.doc_count, dtype=bool)
    for pos, doc_id in enumerate(index.doc_ids):
        if doc_id == query_id or roles.get(doc_id) is not Role.CANDIDATE:
            skip[pos] = True
    first = bm25.ranked_from_scores(scores, skip)[:first_k]
    first_ids = [index.doc_ids[i] for i, _ in first]
    scored = _cosine_to_query(embeddings, query_id, first_ids)
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(query_id=query_id, ranking=tuple(scored))


def evaluate(
    ranked_lists: list[RankedList], labels: LabelSet, cutoff: int = 5
) -> EvalReport:
    """Aggregate the seven-metric suite over all ranked queries."""
    if not ranked_lists:
        raise ValidationError("no ranked lists to evaluate")
    per_query: dict[str, dict[str, float]] = {}
    pooled_tp = pooled_fp = pooled_fn = 0
    for rl in ranked_lists:
        rel = labels.relevance.get(rl.query_id)
        if not rel:
            raise ValidationError(f"query {rl.query_id!r} has no relevance labels")
        top = [cid for cid, _ in rl.ranking[:cutoff]]
        hits = [cid for cid in top if cid in rel]
        tp = len(hits)
        pooled_tp += tp
        pooled_fp += len(top) - tp
        pooled_fn += len(rel) - tp

        precision = tp / cutoff
        recall = tp / len(rel)
        mrr = 0.0
        for pos, cid in enumerate(top, start=1):
            if cid in rel:
                mrr = 1.0 / pos
                break
        ap = _average_precision(rl.ranking, rel)
        ndcg = _ndcg(top, rel, cutoff)
        per_query[rl.query_id] = {
            "P@5": precision,
            "R@5": recall,
            "MRR@5": mrr,
            "MAP": ap,
            "NDCG@5": ndcg,
        }

    n_q = len(ranked_lists)
    # aggregate in sorted query order so the report is independent of the
    # order ranked lists arrive in (float sums are order-sensitive)
    ordered = [per_query[q] for q in sorted(per_query)]
    macro_p = sum(v["P@5"] for v in ordered) / n_q
    macro_r = sum(v["R@5"] for v in ordered) / n_q
    micro_p = pooled_tp / (pooled_tp + pooled_fp) if pooled_tp + pooled_fp else 0.0
    micro_r = pooled_tp / (pooled_tp + pooled_fn) if pooled_tp + pooled_fn else 0.0
    mi_f1 = (
        2 * micro_p * micro_r / (micro_p + micro_r) if micro_p + micro_r else 0.0
    )
    ma_f1 = 2 * macro_p * macro_r / (macro_p + macro_r) if macro_p + macro_r else 0.0
    metrics = {
        "P@5": macro_p,
        "R@5": macro_r,
        "Mi-F1": mi_f1,
        "Ma-F1": ma_f1,
        "MRR@5": sum(v["MRR@5"] for v in ordered) / n_q,
        "MAP": sum(v["MAP"] for v in ordered) / n_q,
        "NDCG@5": sum(v["NDCG@5"] for v in ordered) / n_q,
    }
    return EvalReport(metrics=metrics, per_query=per_query)


def _average_precision(ranking: tuple[tuple[str, float], ...], rel: frozenset) -> float:
    hits = 0
    total = 0.0
    for pos, (cid, _) in enumerate(ranking, start=1):
        if cid in rel:
            hits += 1
            total += hits / pos
    return total / len(rel)


def _ndcg(top: list[str], rel: frozenset, cutoff: int) -> float:
    dcg = 0.0
    for pos, cid in enumerate(top, start=1):
        if cid in rel:
            dcg += 1.0 / math.log2(pos + 1)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(cutoff, len(rel)) + 1))
    return dcg / ideal if ideal else 0.0


# ---------------------------------------------------------------------------
# Run-file and report IO
# ---------------------------------------------------------------------------


def write_run_file(ranked_lists: list[RankedList], path: str | Path) -> None:
    """TSV run export: query_id, candidate_id, rank, score (shortest
    round-trip decimal so scores reload bit-exact)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rl in ranked_lists:
            for position, (cid, score) in enumerate(rl.ranking, start=1):
                fh.write(f"{rl.query_id}\t{cid}\t{position}\t{score!r}\n")


def read_run_file(path: str | Path) -> list[RankedList]:
    by_query: dict[str, list[tuple[int, str, float]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValidationError(f"malformed run record at line {line_no}")
            qid, cid, position, score = parts
            by_query.setdefault(qid, []).append((int(position), cid, float(score)))
    lists = []
    for qid, rows in by_query.items():
        rows.sort()
        lists.append(
            RankedList(query_id=qid, ranking=tuple((c, s) for _, c, s in rows))
        )
    return lists


def write_report(report: EvalReport, path: str | Path) -> None:
    payload = {"metrics": report.metrics, "per_query": report.per_query}
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def summary_line(report: EvalReport) -> str:
    return " ".join(
        f"{name}={report.metrics[name]:.4f}" for name in EvalReport.METRIC_NAMES
    )
