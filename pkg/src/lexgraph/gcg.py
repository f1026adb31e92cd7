"""Global case graph construction.

The graph has ``n`` case nodes (corpus order) followed by ``m`` charge nodes
(vocabulary order). Three unweighted, undirected edge families feed one
composed adjacency matrix:

* case-case: OR-symmetrised BM25 top-k neighbour lists;
* charge-charge: feature similarity above a threshold ``delta``;
* case-charge: the charge phrase occurs in the case text.

Node features come verbatim from an embedding file when one is supplied,
otherwise from a seeded hashed term-frequency embedding of the text.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .bm25 import tokenize
from .corpus import ChargeVocabulary, Corpus
from .errors import ValidationError

logger = logging.getLogger(__name__)


class Similarity(str, Enum):
    COSINE = "cosine"
    DOT = "dot"


class FeatureSource(str, Enum):
    EXTERNAL_FILE = "external_file"
    HASHED_TF = "hashed_tf"


@dataclass(frozen=True)
class GcgConfig:
    k: int = 5
    delta: float = 0.9
    sim: Similarity = Similarity.COSINE
    include_charges: bool = True      # off: case-case-only graph variant
    charge_charge: bool = True        # off: charge-charge block forced to zero
    token_boundary: bool = False      # charge match on token boundaries

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.sim is Similarity.COSINE and not -1.0 <= self.delta <= 1.0:
            raise ValidationError("delta must lie in [-1, 1] for cosine similarity")


@dataclass(frozen=True)
class NodeFeatures:
    dim: int
    case_features: np.ndarray    # n x d, corpus order
    charge_features: np.ndarray  # m x d, vocabulary order
    source: FeatureSource


@dataclass(frozen=True)
class GcgAdjacency:
    n: int
    m: int
    a_case: np.ndarray     # n x n, symmetric, zero diagonal
    a_charge: np.ndarray   # m x m, symmetric, zero diagonal
    a_bridge: np.ndarray   # m x n
    a: np.ndarray          # (n+m) x (n+m) composed block matrix


def fallback_embed(text: str, dim: int, seed: int) -> np.ndarray:
    """Hashed-TF embedding: seeded stable bucket hash with a +/-1 sign hash,
    L2-normalized. The empty text maps to the zero vector."""
    if dim < 2:
        raise ValidationError("embedding dim must be >= 2")
    vec = np.zeros(dim, dtype=np.float64)
    counts: dict[str, int] = {}
    for tok in tokenize(text):
        counts[tok] = counts.get(tok, 0) + 1
    for tok, c in counts.items():
        bucket, sign = _hash_token(tok, dim, seed)
        vec[bucket] += sign * c
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32)


def _hash_token(token: str, dim: int, seed: int) -> tuple[int, int]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=9, salt=seed.to_bytes(8, "little")
    ).digest()
    bucket = int.from_bytes(digest[:8], "little") % dim
    sign = 1 if digest[8] & 1 else -1
    return bucket, sign


def load_embedding_file(path: str | Path) -> dict[str, np.ndarray]:
    """Newline-delimited ``{"id": ..., "vec": [...]}`` records."""
    vectors: dict[str, np.ndarray] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vectors[rec["id"]] = np.asarray(rec["vec"], dtype=np.float32)
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ValidationError(
                    f"malformed embedding record at line {line_no}"
                ) from None
    return vectors


def assemble_features(
    corpus: Corpus,
    charges: ChargeVocabulary,
    embedding_file: str | Path | None = None,
    dim: int = 128,
    seed: int = 0,
) -> NodeFeatures:
    """Node features for all cases then all charges, sharing one dimension.

    External vectors are used verbatim when a file is given; otherwise each
    text is embedded with :func:`fallback_embed` at dimension ``dim``.
    """
    if embedding_file is not None:
        vectors = load_embedding_file(embedding_file)
        all_ids = list(corpus.ids) + charges.ids
        dims = set()
        for node_id in all_ids:
            if node_id not in vectors:
                raise ValidationError(f"embedding file missing id {node_id!r}")
            dims.add(vectors[node_id].shape)
        if len(dims) > 1:
            raise ValidationError(f"embedding dimensions differ: {sorted(dims)}")
        d = int(next(iter(dims))[0])
        case_feats = np.stack([vectors[i] for i in corpus.ids]) if len(corpus) else np.zeros((0, d), np.float32)
        charge_feats = (
            np.stack([vectors[i] for i in charges.ids])
            if len(charges)
            else np.zeros((0, d), dtype=np.float32)
        )
        source = FeatureSource.EXTERNAL_FILE
    else:
        d = dim
        case_feats = np.stack([fallback_embed(doc.text, d, seed) for doc in corpus.docs]) if len(corpus) else np.zeros((0, d), np.float32)
        charge_feats = (
            np.stack([fallback_embed(p, d, seed) for p in charges.phrases])
            if len(charges)
            else np.zeros((0, d), dtype=np.float32)
        )
        source = FeatureSource.HASHED_TF
    if not np.isfinite(case_feats).all() or not np.isfinite(charge_feats).all():
        raise ValidationError("non-finite node feature encountered")
    return NodeFeatures(
        dim=d, case_features=case_feats, charge_features=charge_feats, source=source
    )


def build_case_edges(neighbors: list[list[tuple[int, float]]], n: int) -> np.ndarray:
    """Symmetric OR of the neighbour lists; zero diagonal."""
    a = np.zeros((n, n), dtype=np.uint8)
    for i, lst in enumerate(neighbors):
        for j, _score in lst:
            if j != i:
                a[i, j] = 1
                a[j, i] = 1
    return a


def build_charge_edges(
    charge_features: np.ndarray, delta: float, sim: Similarity = Similarity.COSINE
) -> np.ndarray:
    """Edge (i, j) iff i != j and sim(x_i, x_j) > delta."""
    m = charge_features.shape[0]
    feats = charge_features.astype(np.float64)
    if sim is Similarity.COSINE:
        norms = np.linalg.norm(feats, axis=1)
        zero = norms == 0
        if zero.any():
            logger.warning(
                "%d zero charge vectors under cosine; treated as similarity 0",
                int(zero.sum()),
            )
        safe = np.where(zero, 1.0, norms)
        feats = feats / safe[:, None]
    sims = feats @ feats.T
    a = (sims > delta).astype(np.uint8)
    np.fill_diagonal(a, 0)
    return a


def build_case_charge_edges(
    corpus: Corpus, charges: ChargeVocabulary, token_boundary: bool = False
) -> np.ndarray:
    """m x n matrix: 1 iff the charge phrase occurs in the case text.

    Default is contiguous substring match on normalized text; with
    ``token_boundary`` the phrase must additionally start and end on token
    boundaries.
    """
    m, n = len(charges), len(corpus)
    a = np.zeros((m, n), dtype=np.uint8)
    for i, phrase in enumerate(charges.phrases):
        for j, doc in enumerate(corpus.docs):
            if token_boundary:
                hit = _occurs_on_boundary(phrase, doc.text)
            else:
                hit = phrase in doc.text
            if hit:
                a[i, j] = 1
    return a


def _occurs_on_boundary(phrase: str, text: str) -> bool:
    start = 0
    while True:
        pos = text.find(phrase, start)
        if pos == -1:
            return False
        before_ok = pos == 0 or not text[pos - 1].isalnum()
        end = pos + len(phrase)
        after_ok = end == len(text) or not text[end].isalnum()
        if before_ok and after_ok:
            return True
        start = pos + 1


def compose(a_case: np.ndarray, a_charge: np.ndarray, a_bridge: np.ndarray) -> np.ndarray:
    """Block adjacency [[A_case, A_bridge^T], [A_bridge, A_charge]]."""
    n = a_case.shape[0]
    m = a_charge.shape[0]
    if a_bridge.shape != (m, n):
        raise ValidationError(
            f"bridge block has shape {a_bridge.shape}, expected {(m, n)}"
        )
    a = np.zeros((n + m, n + m), dtype=np.uint8)
    a[:n, :n] = a_case
    a[:n, n:] = a_bridge.T
    a[n:, :n] = a_bridge
    a[n:, n:] = a_charge
    if not np.array_equal(a, a.T):
        raise ValidationError("composed adjacency is not symmetric")
    return a


def build_graph(
    corpus: Corpus,
    charges: ChargeVocabulary,
    features: NodeFeatures,
    neighbors: list[list[tuple[int, float]]],
    config: GcgConfig,
) -> GcgAdjacency:
    """Assemble the full graph from precomputed neighbour lists and features."""
    n = len(corpus)
    a_case = build_case_edges(neighbors, n)
    if config.include_charges:
        m = len(charges)
        if config.charge_charge:
            a_charge = build_charge_edges(
                features.charge_features, config.delta, config.sim
            )
        else:
            a_charge = np.zeros((m, m), dtype=np.uint8)
        a_bridge = build_case_charge_edges(corpus, charges, config.token_boundary)
    else:
        m = 0
        a_charge = np.zeros((0, 0), dtype=np.uint8)
        a_bridge = np.zeros((0, n), dtype=np.uint8)
    a = compose(a_case, a_charge, a_bridge)
    return GcgAdjacency(n=n, m=m, a_case=a_case, a_charge=a_charge, a_bridge=a_bridge, a=a)


def export_graph(
    adjacency: GcgAdjacency,
    corpus: Corpus,
    charges: ChargeVocabulary,
    path: str | Path,
) -> None:
    """Edge-list TSV with a ``#nodes`` header block (index, id, kind)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("#nodes\n")
        for i, doc in enumerate(corpus.docs):
            fh.write(f"#\t{i}\t{doc.id}\tcase\n")
        if adjacency.m:
            for j, (cid, _) in enumerate(charges.charges):
                fh.write(f"#\t{adjacency.n + j}\t{cid}\tcharge\n")
        fh.write("#edges\n")
        rows, cols = np.nonzero(np.triu(adjacency.a, k=1))
        for r, c in zip(rows, cols):
            fh.write(f"{r}\t{c}\n")
