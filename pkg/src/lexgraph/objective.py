"""Training objective: contrastive loss over sampled negatives plus a
degree penalty on candidate embeddings.

Per query the loss is

    -log( e^{s(q,d+)/tau} / (e^{s(q,d+)/tau} + sum_easy e^{s/tau}
                             + sum_hard e^{s/tau} + sum_in_batch e^{s/tau}) )

computed through a max-shifted log-sum-exp. Hard negatives come from the
top of the BM25 ranking among non-relevant candidates; in-batch negatives
are the positives of the other queries in the step. The degree penalty sums
cosine similarity of each candidate row against every case row (self term
included; it is constant 1 with zero gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import bm25
from .corpus import Corpus, LabelSet
from .errors import ValidationError


class LossSim(str, Enum):
    DOT = "dot"
    COSINE = "cosine"


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    lam: float = 1e-3
    sim: LossSim = LossSim.DOT
    n_easy: int = 1
    n_hard: int = 5
    hard_pool: int = 50

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if self.n_easy < 0 or self.n_hard < 0:
            raise ValidationError("negative sample counts must be >= 0")


@dataclass(frozen=True)
class BatchEntry:
    query: int
    positive: int
    easy: tuple[int, ...]
    hard: tuple[int, ...]


@dataclass(frozen=True)
class TrainingBatch:
    entries: tuple[BatchEntry, ...]
    in_batch: bool = True


def hard_negative_ranking(
    index: bm25.Bm25Index, corpus: Corpus, query_idx: int, labels: LabelSet
) -> list[int]:
    """Candidate indices ranked by BM25 against the query, positives removed."""
    qid = corpus.docs[query_idx].id
    relevant = labels.relevance.get(qid, frozenset())
    scores = bm25.score_all_by_doc(index, query_idx)
    ranked = []
    order = np.lexsort((np.arange(len(scores)), -scores))
    for i in order:
        doc = corpus.docs[int(i)]
        if int(i) == query_idx or doc.role.value != "candidate":
            continue
        if doc.id in relevant:
            continue
        ranked.append(int(i))
    return ranked


def sample_batch(
    query_indices: list[int],
    corpus: Corpus,
    labels: LabelSet,
    index: bm25.Bm25Index,
    config: LossConfig,
    rng: np.random.Generator,
    hard_rankings: dict[int, list[int]] | None = None,
) -> TrainingBatch:
    """One entry per query: a positive, hard negatives from the top of the
    BM25 ranking, easy negatives uniform over the remaining non-relevant
    candidates. Deterministic given the rng state."""
    candidate_ids = {corpus.docs[i].id for i in corpus.candidate_indices()}
    entries = []
    for q in query_indices:
        qid = corpus.docs[q].id
        positives = sorted(labels.relevance.get(qid, frozenset()))
        if not positives:
            raise ValidationError(f"query {qid!r} has no positive labels")
        pos_id = positives[int(rng.integers(len(positives)))]
        pos_idx = corpus.index_of(pos_id)

        non_relevant = [
            i
            for i in corpus.candidate_indices()
            if corpus.docs[i].id not in labels.relevance[qid]
        ]
        if len(candidate_ids) < config.n_easy + config.n_hard + 1:
            raise ValidationError(
                f"candidate pool too small for query {qid!r}: "
                f"{len(candidate_ids)} < {config.n_easy + config.n_hard + 1}"
            )
        if len(non_relevant) < config.n_easy + config.n_hard:
            raise ValidationError(
                f"not enough non-relevant candidates for query {qid!r}"
            )

        if config.n_hard > 0:
            if hard_rankings is not None and q in hard_rankings:
                ranked = hard_rankings[q]
            else:
                ranked = hard_negative_ranking(index, corpus, q, labels)
            pool = ranked[: config.hard_pool]
            if len(pool) < config.n_hard:
                raise ValidationError(
                    f"hard-negative pool too small for query {qid!r}"
                )
            pick = rng.choice(len(pool), size=config.n_hard, replace=False)
            hard = tuple(pool[int(i)] for i in np.sort(pick))
        else:
            hard = ()

        easy_pool = [i for i in non_relevant if i not in hard]
        if len(easy_pool) < config.n_easy:
            raise ValidationError(f"easy-negative pool too small for query {qid!r}")
        pick = rng.choice(len(easy_pool), size=config.n_easy, replace=False)
        easy = tuple(easy_pool[int(i)] for i in np.sort(pick))

        entries.append(BatchEntry(query=q, positive=pos_idx, easy=easy, hard=hard))
    return TrainingBatch(entries=tuple(entries))


def _similarities(h_cases: ad.Tensor, query_idx: int, other_idx: list[int],
                  sim: LossSim) -> ad.Tensor:
    """Column vector of s(q, d_i) for the listed case rows."""
    rows = ad.gather_rows(h_cases, np.asarray(other_idx, dtype=np.int64))
    q_row = ad.gather_rows(h_cases, np.asarray([query_idx], dtype=np.int64))
    if sim is LossSim.COSINE:
        rows = ad.l2_normalize_rows(rows)
        q_row = ad.l2_normalize_rows(q_row)
    return ad.matmul(rows, ad.transpose(q_row))


def info_nce(
    h_cases: ad.Tensor,
    entry: BatchEntry,
    in_batch_pos: list[int],
    tau: float,
    sim: LossSim = LossSim.DOT,
) -> ad.Tensor:
    """Contrastive loss for one query (scalar tensor, differentiable)."""
    if tau <= 0:
        raise ValidationError("tau must be > 0")
    idx = [entry.positive, *entry.easy, *entry.hard, *in_batch_pos]
    sims = _similarities(h_cases, entry.query, idx, sim)
    logits = ad.scale(sims, 1.0 / tau)
    # constant max shift keeps exp in range without touching the gradient
    shift = float(logits.data.max())
    shifted = ad.add_const(logits, -shift)
    lse = ad.log(ad.sum(ad.exp(shifted)))
    pos_logit = ad.sum(ad.gather_rows(shifted, np.asarray([0], dtype=np.int64)))
    return ad.sub(lse, pos_logit)


def deg_reg(h_cases: ad.Tensor, candidate_indices: list[int]) -> ad.Tensor:
    """Sum of cosine similarities from every candidate row to all case rows."""
    if len(candidate_indices) == 0:
        raise ValidationError("degree penalty needs at least one candidate")
    normalized = ad.l2_normalize_rows(h_cases)
    cand = ad.gather_rows(normalized, np.asarray(candidate_indices, dtype=np.int64))
    sims = ad.matmul(cand, ad.transpose(normalized))
    return ad.sum(sims)


def total_loss(
    infonce_losses: list[ad.Tensor], degreg: ad.Tensor | None, lam: float
) -> ad.Tensor:
    """Mean per-query contrastive loss plus ``lam`` times the degree penalty."""
    if not infonce_losses:
        raise ValidationError("empty batch")
    acc = infonce_losses[0]
    for term in infonce_losses[1:]:
        acc = ad.add(acc, term)
    mean_nce = ad.scale(acc, 1.0 / len(infonce_losses))
    if degreg is None or lam == 0.0:
        return mean_nce
    return ad.add(mean_nce, ad.scale(degreg, lam))
