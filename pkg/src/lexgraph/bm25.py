"""Okapi BM25 over an inverted index, plus top-k neighbour retrieval.

Scoring uses the non-negative IDF variant,

    score(q, d) = sum over unique query terms t of
                  IDF(t) * tf(t, d) * (k1 + 1) / (tf(t, d) + k1 * (1 - b + b * |d| / avgdl))
    IDF(t)      = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))

with k1 = 1.2, b = 0.75 by default. Ties in top-k are broken by ascending
document index so repeated builds give identical neighbour graphs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .corpus import Corpus
from .errors import ValidationError

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Split normalized text on non-alphanumeric boundaries."""
    return _TOKEN.findall(text)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    stopwords: frozenset[str] = frozenset()


@dataclass
class Bm25Index:
    """Immutable inverted index over one corpus (CSR postings layout).

    ``indptr[t]:indptr[t+1]`` slices ``posting_docs``/``posting_tfs`` for
    term id ``t``; postings are sorted by document index and tfs are >= 1.
    """

    doc_ids: list[str]
    vocabulary: dict[str, int]
    indptr: np.ndarray       # int64, len V+1
    posting_docs: np.ndarray  # int64
    posting_tfs: np.ndarray   # float64
    idf: np.ndarray           # float64, len V
    doc_lengths: np.ndarray   # int64
    avg_doc_length: float
    doc_count: int
    params: Bm25Params
    doc_term_ids: list[np.ndarray] = field(repr=False, default_factory=list)
    _denom_base: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._denom_base is None:
            k1, b = self.params.k1, self.params.b
            avgdl = self.avg_doc_length if self.avg_doc_length > 0 else 1.0
            self._denom_base = k1 * (
                1.0 - b + b * self.doc_lengths.astype(np.float64) / avgdl
            )
        self._id_index = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}


def build_index(corpus: Corpus, params: Bm25Params | None = None) -> Bm25Index:
    """Index every document of the corpus, in corpus order."""
    if len(corpus) == 0:
        raise ValidationError("cannot build a BM25 index over an empty corpus")
    params = params or Bm25Params()

    vocabulary: dict[str, int] = {}
    doc_tf: list[dict[int, int]] = []
    doc_lengths = np.zeros(len(corpus), dtype=np.int64)
    for i, doc in enumerate(corpus.docs):
        tokens = [t for t in tokenize(doc.text) if t not in params.stopwords]
        doc_lengths[i] = len(tokens)
        counts: dict[int, int] = {}
        for tok in tokens:
            tid = vocabulary.setdefault(tok, len(vocabulary))
            counts[tid] = counts.get(tid, 0) + 1
        doc_tf.append(counts)

    n_terms = len(vocabulary)
    df = np.zeros(n_terms, dtype=np.int64)
    for counts in doc_tf:
        for tid in counts:
            df[tid] += 1

    # CSR postings, docs visited in index order so postings come out sorted.
    indptr = np.zeros(n_terms + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(df)
    posting_docs = np.zeros(int(indptr[-1]), dtype=np.int64)
    posting_tfs = np.zeros(int(indptr[-1]), dtype=np.float64)
    cursor = indptr[:-1].copy()
    for i, counts in enumerate(doc_tf):
        for tid, tf in counts.items():
            p = cursor[tid]
            posting_docs[p] = i
            posting_tfs[p] = tf
            cursor[tid] += 1

    n = len(corpus)
    idf = np.log(1.0 + (n - df + 0.5) / (df + 0.5))

    # first-seen token order, matching _term_ids on the document's own text
    # so both scoring paths accumulate in the same order
    doc_term_ids = [
        np.array(list(counts.keys()), dtype=np.int64) for counts in doc_tf
    ]

    return Bm25Index(
        doc_ids=list(corpus.ids),
        vocabulary=dict(vocabulary),
        indptr=indptr,
        posting_docs=posting_docs,
        posting_tfs=posting_tfs,
        idf=idf,
        doc_lengths=doc_lengths,
        avg_doc_length=float(np.mean(doc_lengths)),
        doc_count=n,
        params=params,
        doc_term_ids=doc_term_ids,
    )


def _term_ids(index: Bm25Index, query_tokens: list[str]) -> np.ndarray:
    """Unique, in-vocabulary term ids in first-seen query order."""
    seen: dict[int, None] = {}
    for tok in query_tokens:
        tid = index.vocabulary.get(tok)
        if tid is not None and tid not in seen:
            seen[tid] = None
    return np.array(list(seen.keys()), dtype=np.int64)


def score_all(index: Bm25Index, query_tokens: list[str]) -> np.ndarray:
    """BM25 scores of the query against every indexed document."""
    tids = _term_ids(index, query_tokens)
    if tids.size == 0:
        return np.zeros(index.doc_count, dtype=np.float64)
    return _kernels.bm25_scores(
        tids,
        index.indptr,
        index.posting_docs,
        index.posting_tfs,
        index.idf,
        index._denom_base,
        index.params.k1,
        index.doc_count,
    )


def score(index: Bm25Index, query_tokens: list[str], doc_index: int) -> float:
    """BM25 score of the query against a single document."""
    if not 0 <= doc_index < index.doc_count:
        raise ValidationError(f"doc_index {doc_index} out of range")
    total = 0.0
    for tid in _term_ids(index, query_tokens):
        sl = slice(index.indptr[tid], index.indptr[tid + 1])
        docs = index.posting_docs[sl]
        pos = np.searchsorted(docs, doc_index)
        if pos < docs.size and docs[pos] == doc_index:
            tf = index.posting_tfs[sl][pos]
            # same expression order as the batch kernel, so exact ties in
            # either path are exact ties in the other
            w = index.idf[tid] * (index.params.k1 + 1.0)
            total += w * tf / (tf + index._denom_base[doc_index])
    return float(total)


def ranked_from_scores(scores: np.ndarray, skip: np.ndarray) -> list[tuple[int, float]]:
    """All unskipped docs by descending score, ascending index on ties."""
    keep = np.flatnonzero(~skip)
    order = keep[np.lexsort((keep, -scores[keep]))]
    return [(int(i), float(scores[i])) for i in order]


def top_k(
    index: Bm25Index,
    query_doc_index: int,
    k: int,
    exclude: set[str] | None = None,
) -> list[tuple[int, float]]:
    """Up to k highest-scoring documents for a document's own tokens.

    The document itself and any id in ``exclude`` are skipped.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = score_all_by_doc(index, query_doc_index)
    skip = np.zeros(index.doc_count, dtype=bool)
    skip[query_doc_index] = True
    for doc_id in exclude or ():
        pos = index._id_index.get(doc_id)
        if pos is not None:
            skip[pos] = True
    return ranked_from_scores(scores, skip)[:k]


def score_all_by_doc(index: Bm25Index, doc_index: int) -> np.ndarray:
    """Scores of document ``doc_index``'s unique terms against all docs."""
    tids = index.doc_term_ids[doc_index]
    if tids.size == 0:
        return np.zeros(index.doc_count, dtype=np.float64)
    return _kernels.bm25_scores(
        tids,
        index.indptr,
        index.posting_docs,
        index.posting_tfs,
        index.idf,
        index._denom_base,
        index.params.k1,
        index.doc_count,
    )


def pairwise_topk(index: Bm25Index, k: int) -> list[list[tuple[int, float]]]:
    """Per-document top-k neighbour lists (self excluded)."""
    return [top_k(index, i, k) for i in range(index.doc_count)]


def export_neighbors(
    index: Bm25Index, neighbors: list[list[tuple[int, float]]], path: str | Path
) -> None:
    """TSV export: case_id, neighbor_id, score."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, lst in enumerate(neighbors):
            for j, s in lst:
                fh.write(f"{index.doc_ids[i]}\t{index.doc_ids[j]}\t{s!r}\n")
