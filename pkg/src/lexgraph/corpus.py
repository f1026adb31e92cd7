"""Document pool, relevance labels and charge vocabulary.

File formats:

* corpus: newline-delimited JSON, one ``{"id", "text", "role"}`` object per
  line, ``role`` in ``{"query", "candidate"}``, UTF-8;
* labels: a single JSON object mapping query id to a list of candidate ids;
* charges: plain text, one charge phrase per line.

All loaded text is normalized (lowercase, collapsed whitespace). Loaders
return immutable values; a train corpus and a test corpus must never share
document ids (the retrieval regime is strictly inductive).
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import ValidationError

_WS_RUN = re.compile(r"\s+")


class Role(str, Enum):
    QUERY = "query"
    CANDIDATE = "candidate"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


def normalize_text(raw: str) -> str:
    """Lowercase, collapse whitespace runs, strip, drop control characters.

    Deterministic and idempotent; may return the empty string. Non-space
    control and format characters go first so their removal cannot leave a
    fresh whitespace run behind.
    """
    lowered = raw.lower()
    cleaned = "".join(
        ch
        for ch in lowered
        if ch.isspace() or unicodedata.category(ch) not in ("Cc", "Cf")
    )
    return _WS_RUN.sub(" ", cleaned).strip()


@dataclass(frozen=True)
class Document:
    id: str
    text: str  # normalized
    role: Role
    split: Split


@dataclass(frozen=True)
class Corpus:
    docs: tuple[Document, ...]
    split: Split
    by_id: dict[str, Document] = field(repr=False, default_factory=dict)
    _index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "by_id", {d.id: d for d in self.docs})
        object.__setattr__(self, "_index", {d.id: i for i, d in enumerate(self.docs)})

    def __len__(self) -> int:
        return len(self.docs)

    def index_of(self, doc_id: str) -> int:
        return self._index[doc_id]

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.docs]

    def query_indices(self) -> list[int]:
        return [i for i, d in enumerate(self.docs) if d.role is Role.QUERY]

    def candidate_indices(self) -> list[int]:
        return [i for i, d in enumerate(self.docs) if d.role is Role.CANDIDATE]


@dataclass(frozen=True)
class LabelSet:
    """Query id -> set of relevant candidate ids."""

    relevance: dict[str, frozenset[str]]

    def __len__(self) -> int:
        return len(self.relevance)


@dataclass(frozen=True)
class ChargeVocabulary:
    """Ordered (charge_id, phrase) pairs; order defines charge-node indexing."""

    charges: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.charges)

    @property
    def ids(self) -> list[str]:
        return [cid for cid, _ in self.charges]

    @property
    def phrases(self) -> list[str]:
        return [p for _, p in self.charges]


def make_corpus(records: list[dict], split: Split) -> Corpus:
    """Validate raw records into a Corpus. Raises ValidationError."""
    docs = []
    seen: set[str] = set()
    for line_no, rec in enumerate(records, start=1):
        if not isinstance(rec, dict) or not {"id", "text", "role"} <= set(rec):
            raise ValidationError(f"malformed record at line {line_no}")
        doc_id = rec["id"]
        if not isinstance(doc_id, str) or not doc_id:
            raise ValidationError(f"malformed record at line {line_no}: bad id")
        if doc_id in seen:
            raise ValidationError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        try:
            role = Role(rec["role"])
        except ValueError:
            raise ValidationError(
                f"malformed record at line {line_no}: unknown role {rec['role']!r}"
            ) from None
        text = normalize_text(rec["text"])
        if not text:
            raise ValidationError(f"empty text for document {doc_id!r}")
        docs.append(Document(id=doc_id, text=text, role=role, split=split))
    return Corpus(docs=tuple(docs), split=split)


def load_corpus(path: str | Path, split: Split) -> Corpus:
    """Load a newline-delimited JSON corpus file for the given split."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                raise ValidationError(
                    f"malformed record at line {line_no} of {path}"
                ) from None
    return make_corpus(records, split)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to newline-delimited JSON (round-trips exactly)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in corpus.docs:
            fh.write(
                json.dumps(
                    {"id": d.id, "text": d.text, "role": d.role.value},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_labels(path: str | Path, corpus: Corpus | None = None) -> LabelSet:
    """Load a labels file; validate references if a corpus is given."""
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValidationError("labels file must contain a JSON object")
    relevance = {}
    for qid, cand_ids in raw.items():
        if not isinstance(cand_ids, list) or not cand_ids:
            raise ValidationError(f"label set for query {qid!r} must be non-empty")
        relevance[qid] = frozenset(cand_ids)
    labels = LabelSet(relevance=relevance)
    if corpus is not None:
        validate_labels(labels, corpus)
    return labels


def validate_labels(labels: LabelSet, corpus: Corpus) -> None:
    """Check every label reference resolves to the right role in the corpus."""
    for qid, cand_ids in labels.relevance.items():
        q = corpus.by_id.get(qid)
        if q is None:
            raise ValidationError(f"label references unknown query id {qid!r}")
        if q.role is not Role.QUERY:
            raise ValidationError(f"label key {qid!r} is not a query-role document")
        for cid in cand_ids:
            c = corpus.by_id.get(cid)
            if c is None:
                raise ValidationError(
                    f"label for query {qid!r} references unknown id {cid!r}"
                )
            if c.role is not Role.CANDIDATE:
                raise ValidationError(
                    f"label for query {qid!r} references non-candidate {cid!r}"
                )


def save_labels(labels: LabelSet, path: str | Path) -> None:
    serializable = {q: sorted(c) for q, c in sorted(labels.relevance.items())}
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(serializable, fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_charges(path: str | Path) -> ChargeVocabulary:
    """Load one charge phrase per line; ids are c1..cm in file order."""
    phrases = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            phrase = normalize_text(line)
            if not phrase:
                raise ValidationError(
                    f"charge phrase at line {line_no} is empty after normalization"
                )
            phrases.append(phrase)
    seen: dict[str, int] = {}
    for i, p in enumerate(phrases):
        if p in seen:
            raise ValidationError(f"duplicate charge phrase {p!r}")
        seen[p] = i
    charges = tuple((f"c{i + 1}", p) for i, p in enumerate(phrases))
    return ChargeVocabulary(charges=charges)


def save_charges(charges: ChargeVocabulary, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for _, phrase in charges.charges:
            fh.write(phrase + "\n")


def assert_inductive(train: Corpus, test: Corpus) -> None:
    """Fail if the two corpora share any document id."""
    overlap = set(train.ids) & set(test.ids)
    if overlap:
        raise ValidationError(
            f"train/test id overlap breaks inductivity: {sorted(overlap)[:5]}"
        )
