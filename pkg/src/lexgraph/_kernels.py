"""Hot numeric kernels with numba-compiled and pure-numpy backends.

The inner loops that dominate runtime live here: term-at-a-time BM25
scoring over postings, and the per-edge scatter/segment reductions used
by the graph layers. Each kernel has two implementations that produce
bitwise-identical results (same accumulation order, float64 throughout):

* ``*_numba`` -- ``@njit(cache=True)`` compiled loops (default).
* ``*_numpy`` -- vectorised numpy fallback.

Backend selection happens once at import time from the ``LEXGRAPH_KERNELS``
environment variable: ``numba`` (default when importable), ``numpy``, or
``auto``. ``benchmarks/bench_kernels.py`` compares both.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _NUMBA_IMPORTABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_IMPORTABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


# ---------------------------------------------------------------------------
# BM25 term-at-a-time scoring
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bm25_scores_numba(term_ids, indptr, posting_docs, posting_tfs, idf,
                       denom_base, k1, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    for i in range(term_ids.shape[0]):
        t = term_ids[i]
        w = idf[t] * (k1 + 1.0)
        for p in range(indptr[t], indptr[t + 1]):
            d = posting_docs[p]
            tf = posting_tfs[p]
            scores[d] += w * tf / (tf + denom_base[d])
    return scores


def _bm25_scores_numpy(term_ids, indptr, posting_docs, posting_tfs, idf,
                       denom_base, k1, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    for t in term_ids:
        sl = slice(indptr[t], indptr[t + 1])
        docs = posting_docs[sl]
        tfs = posting_tfs[sl]
        scores[docs] += idf[t] * (k1 + 1.0) * tfs / (tfs + denom_base[docs])
    return scores


# ---------------------------------------------------------------------------
# Row scatter-add and segment reductions (graph message passing)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scatter_add_rows_numba(rows, idx, n_out):
    out = np.zeros((n_out, rows.shape[1]), dtype=np.float64)
    for e in range(rows.shape[0]):
        i = idx[e]
        for j in range(rows.shape[1]):
            out[i, j] += rows[e, j]
    return out


def _scatter_add_rows_numpy(rows, idx, n_out):
    out = np.zeros((n_out, rows.shape[1]), dtype=np.float64)
    np.add.at(out, idx, rows)
    return out


@njit(cache=True)
def _segment_max_numba(values, seg_ids, n_segs):
    out = np.full(n_segs, -np.inf, dtype=np.float64)
    for e in range(values.shape[0]):
        s = seg_ids[e]
        if values[e] > out[s]:
            out[s] = values[e]
    return out


def _segment_max_numpy(values, seg_ids, n_segs):
    out = np.full(n_segs, -np.inf, dtype=np.float64)
    np.maximum.at(out, seg_ids, values)
    return out


@njit(cache=True)
def _segment_sum_numba(values, seg_ids, n_segs):
    out = np.zeros(n_segs, dtype=np.float64)
    for e in range(values.shape[0]):
        out[seg_ids[e]] += values[e]
    return out


def _segment_sum_numpy(values, seg_ids, n_segs):
    out = np.zeros(n_segs, dtype=np.float64)
    np.add.at(out, seg_ids, values)
    return out


# ---------------------------------------------------------------------------
# Backend dispatch
# ---------------------------------------------------------------------------

_BACKENDS = {
    "numba": {
        "bm25_scores": _bm25_scores_numba,
        "scatter_add_rows": _scatter_add_rows_numba,
        "segment_max": _segment_max_numba,
        "segment_sum": _segment_sum_numba,
    },
    "numpy": {
        "bm25_scores": _bm25_scores_numpy,
        "scatter_add_rows": _scatter_add_rows_numpy,
        "segment_max": _segment_max_numpy,
        "segment_sum": _segment_sum_numpy,
    },
}


def _resolve_backend() -> str:
    requested = os.environ.get("LEXGRAPH_KERNELS", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"LEXGRAPH_KERNELS must be 'auto', 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    if requested == "numba" and not _NUMBA_IMPORTABLE:
        raise ImportError("LEXGRAPH_KERNELS=numba but numba is not importable")
    return "numba" if _NUMBA_IMPORTABLE else "numpy"


BACKEND = _resolve_backend()

bm25_scores = _BACKENDS[BACKEND]["bm25_scores"]
scatter_add_rows = _BACKENDS[BACKEND]["scatter_add_rows"]
segment_max = _BACKENDS[BACKEND]["segment_max"]
segment_sum = _BACKENDS[BACKEND]["segment_sum"]
