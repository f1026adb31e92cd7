"""Synthetic corpus generator with planted retrieval structure.

Each topic owns a word vocabulary (split into a "core" half and a "far"
half) and a charge phrase. A query draws on the topic core; its relevant
candidates split into near ones (core + far vocabulary, so they overlap the
query directly) and far ones (far vocabulary only, so they share almost no
terms with the query and are reachable only through near neighbours or the
shared charge mention). Both edge mechanisms of the case graph therefore
carry recoverable signal, while plain feature cosine ranks the far half
poorly. One charge-phrase pair reuses the same words in a different order,
planting a charge-charge similarity edge.

Output of :func:`write_dataset` is byte-identical for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    ChargeVocabulary,
    Corpus,
    LabelSet,
    Split,
    make_corpus,
    save_charges,
    save_corpus,
    save_labels,
)
from .errors import ValidationError

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 7
    n_queries: int = 10
    n_candidates: int = 50
    n_charges: int = 8
    topics: int = 10
    relevant_per_query: int = 4
    n_common_words: int = 40
    n_topic_words: int = 20      # per topic, split evenly into core/far
    words_per_doc: int = 60

    def __post_init__(self):
        per_topic = self.n_candidates // self.topics
        if self.relevant_per_query > per_topic:
            raise ValidationError(
                f"relevant_per_query {self.relevant_per_query} exceeds "
                f"candidates per topic {per_topic}"
            )
        if self.n_charges < 1 or self.topics < 1:
            raise ValidationError("need at least one charge and one topic")


def _word(rng: np.random.Generator, syllables: int) -> str:
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))]
        + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )


def _vocabulary(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        w = _word(rng, syllables=int(rng.integers(2, 4)))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _sample_words(
    rng: np.random.Generator, pools: list[tuple[list[str], float]], count: int
) -> list[str]:
    weights = np.array([w for _, w in pools], dtype=np.float64)
    weights /= weights.sum()
    out = []
    for _ in range(count):
        pool = pools[int(rng.choice(len(pools), p=weights))][0]
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def _with_mention(rng: np.random.Generator, words: list[str], phrase: str) -> str:
    pos = int(rng.integers(len(words) + 1))
    return " ".join(words[:pos] + phrase.split() + words[pos:])


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
        taken: set[str] = set()
        self.common = _vocabulary(rng, spec.n_common_words, taken)
        half = max(1, spec.n_topic_words // 2)
        self.core = [_vocabulary(rng, half, taken) for _ in range(spec.topics)]
        self.far = [_vocabulary(rng, half, taken) for _ in range(spec.topics)]
        charge_words = _vocabulary(rng, 3 * spec.n_charges, taken)
        phrases = [
            " ".join(charge_words[3 * i : 3 * i + 3]) for i in range(spec.n_charges)
        ]
        if spec.n_charges >= 2:
            # reordered twin of the second-to-last phrase: identical word
            # counts, so the hashed-TF cosine is 1 and a charge edge appears
            words = phrases[-2].split()
            phrases[-1] = " ".join([words[1], words[2], words[0]])
        self.phrases = phrases

    def charge_of_topic(self, topic: int) -> str:
        return self.phrases[topic % self.spec.n_charges]

    def build_split(self, split: Split, prefix: str, stream: int):
        spec = self.spec
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream]))
        per_topic = spec.n_candidates // spec.topics
        n_near = (spec.relevant_per_query + 1) // 2

        records = []
        labels: dict[str, list[str]] = {}
        cand_counter = 0

        def add_candidate(text: str) -> str:
            nonlocal cand_counter
            cand_counter += 1
            cid = f"{prefix}d{cand_counter:03d}"
            records.append({"id": cid, "text": text, "role": "candidate"})
            return cid

        for q in range(spec.n_queries):
            topic = q % spec.topics
            qid = f"{prefix}q{q + 1:03d}"
            phrase = self.charge_of_topic(topic)
            q_words = _sample_words(
                rng, [(self.core[topic], 0.55), (self.common, 0.45)], spec.words_per_doc
            )
            records.append(
                {"id": qid, "text": _with_mention(rng, q_words, phrase), "role": "query"}
            )

            relevant = []
            for r in range(spec.relevant_per_query):
                if r < n_near:
                    pools = [
                        (self.core[topic], 0.3),
                        (self.far[topic], 0.3),
                        (self.common, 0.4),
                    ]
                else:
                    pools = [(self.far[topic], 0.55), (self.common, 0.45)]
                words = _sample_words(rng, pools, spec.words_per_doc)
                relevant.append(add_candidate(_with_mention(rng, words, phrase)))
            labels[qid] = relevant

            # same-topic distractors: far vocabulary of another topic plus a
            # foreign charge mention
            for _ in range(per_topic - spec.relevant_per_query):
                other = (topic + 1 + int(rng.integers(spec.topics - 1))) % spec.topics if spec.topics > 1 else topic
                words = _sample_words(
                    rng, [(self.far[other], 0.35), (self.common, 0.65)],
                    spec.words_per_doc,
                )
                add_candidate(_with_mention(rng, words, self.charge_of_topic(other)))

        # leftover candidates when topics do not divide the pool evenly
        while cand_counter < spec.n_candidates:
            words = _sample_words(rng, [(self.common, 1.0)], spec.words_per_doc)
            add_candidate(" ".join(words))

        corpus = make_corpus(records, split)
        label_set = LabelSet(
            relevance={q: frozenset(c) for q, c in labels.items()}
        )
        return corpus, label_set


def generate(spec: SynthSpec):
    """Build (train corpus, train labels, test corpus, test labels, charges)."""
    gen = _Generator(spec)
    train_corpus, train_labels = gen.build_split(Split.TRAIN, "tr_", stream=1)
    test_corpus, test_labels = gen.build_split(Split.TEST, "te_", stream=2)
    charges = ChargeVocabulary(
        charges=tuple((f"c{i + 1}", p) for i, p in enumerate(gen.phrases))
    )
    return train_corpus, train_labels, test_corpus, test_labels, charges


def write_dataset(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Generate and write the five dataset files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_corpus, train_labels, test_corpus, test_labels, charges = generate(spec)
    paths = {
        "train_corpus": out / "train_corpus.jsonl",
        "train_labels": out / "train_labels.json",
        "test_corpus": out / "test_corpus.jsonl",
        "test_labels": out / "test_labels.json",
        "charges": out / "charges.txt",
    }
    save_corpus(train_corpus, paths["train_corpus"])
    save_labels(train_labels, paths["train_labels"])
    save_corpus(test_corpus, paths["test_corpus"])
    save_labels(test_labels, paths["test_labels"])
    save_charges(charges, paths["charges"])
    return paths
