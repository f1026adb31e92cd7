"""Inductive graph-based legal case retrieval.

Pipeline: load a document pool and charge vocabulary, build a case graph
(BM25 neighbour edges, charge-similarity edges, phrase-occurrence edges),
train an attention GNN under a contrastive + degree-regularised objective,
and rank unseen candidate pools by embedding cosine.
"""

from .corpus import (
    ChargeVocabulary,
    Corpus,
    Document,
    LabelSet,
    Role,
    Split,
    load_charges,
    load_corpus,
    load_labels,
    normalize_text,
)
from .errors import LexGraphError, NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ChargeVocabulary",
    "Corpus",
    "Document",
    "LabelSet",
    "LexGraphError",
    "NumericalError",
    "Role",
    "Split",
    "ValidationError",
    "__version__",
    "load_charges",
    "load_corpus",
    "load_labels",
    "normalize_text",
]
