import json
import math

import numpy as np
import pytest

from lexgraph.bm25 import build_index, pairwise_topk
from lexgraph.corpus import ChargeVocabulary, Split, make_corpus
from lexgraph.errors import ValidationError
from lexgraph.gcg import (
    FeatureSource,
    GcgConfig,
    Similarity,
    _hash_token,
    assemble_features,
    build_case_charge_edges,
    build_case_edges,
    build_charge_edges,
    build_graph,
    compose,
    fallback_embed,
)


def _charges(*phrases):
    return ChargeVocabulary(
        charges=tuple((f"c{i+1}", p) for i, p in enumerate(phrases))
    )


def _corpus(texts):
    return make_corpus(
        [{"id": f"d{i}", "text": t, "role": "candidate"} for i, t in enumerate(texts)],
        Split.TRAIN,
    )


class TestFallbackEmbed:
    def test_empty_text_zero_vector(self):
        assert np.all(fallback_embed("", 16, 0) == 0.0)

    def test_identical_texts_identical_vectors(self):
        a = fallback_embed("tax act claim", 32, 5)
        b = fallback_embed("tax act claim", 32, 5)
        assert np.array_equal(a, b)
        cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cos == pytest.approx(1.0, abs=1e-6)

    def test_unit_norm(self):
        v = fallback_embed("one two three four", 64, 1)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)

    def test_disjoint_vocabulary_orthogonal_when_no_collision(self):
        dim, seed = 64, 3
        words_a = ["alpha", "bravo", "charlie"]
        words_b = ["delta", "echo", "foxtrot"]
        buckets_a = {_hash_token(w, dim, seed)[0] for w in words_a}
        buckets_b = {_hash_token(w, dim, seed)[0] for w in words_b}
        assert not buckets_a & buckets_b, "pick another seed: bucket collision"
        va = fallback_embed(" ".join(words_a), dim, seed)
        vb = fallback_embed(" ".join(words_b), dim, seed)
        assert float(va @ vb) == 0.0

    def test_dim_too_small(self):
        with pytest.raises(ValidationError):
            fallback_embed("a", 1, 0)

    def test_seed_changes_embedding(self):
        a = fallback_embed("tax act", 32, 0)
        b = fallback_embed("tax act", 32, 1)
        assert not np.array_equal(a, b)


class TestAssembleFeatures:
    def _embedding_file(self, tmp_path, ids, dim=8, bad_id=None, bad_dim=None):
        path = tmp_path / "emb.jsonl"
        with path.open("w") as fh:
            for i in ids:
                if i == bad_id:
                    continue
                d = bad_dim if bad_dim and i == ids[-1] else dim
                fh.write(json.dumps({"id": i, "vec": [0.5] * d}) + "\n")
        return path

    def test_external_file(self, tmp_path):
        corpus = _corpus(["a", "b"])
        charges = _charges("tax")
        path = self._embedding_file(tmp_path, ["d0", "d1", "c1"], dim=128)
        feats = assemble_features(corpus, charges, embedding_file=path)
        assert feats.source is FeatureSource.EXTERNAL_FILE
        assert feats.dim == 128
        assert feats.case_features.shape == (2, 128)

    def test_missing_id_named(self, tmp_path):
        corpus = _corpus(["a", "b"])
        charges = _charges("tax", "duty", "theft")
        path = self._embedding_file(
            tmp_path, ["d0", "d1", "c1", "c2", "c3"], bad_id="c3"
        )
        with pytest.raises(ValidationError, match="c3"):
            assemble_features(corpus, charges, embedding_file=path)

    def test_dim_mismatch(self, tmp_path):
        corpus = _corpus(["a", "b"])
        charges = _charges("tax")
        path = self._embedding_file(tmp_path, ["d0", "d1", "c1"], bad_dim=4)
        with pytest.raises(ValidationError, match="dimension"):
            assemble_features(corpus, charges, embedding_file=path)

    def test_hashed_fallback_rows_unit_norm(self):
        corpus = _corpus(["some case text", "another one"])
        charges = _charges("tax evasion")
        feats = assemble_features(corpus, charges, dim=64, seed=1)
        assert feats.source is FeatureSource.HASHED_TF
        for row in np.vstack([feats.case_features, feats.charge_features]):
            assert np.linalg.norm(row) == pytest.approx(1.0, abs=1e-6)


class TestCaseEdges:
    def test_or_symmetrisation(self):
        # neighbours: 1->{2}, 2->{1}, 3->{1}; edge (1,3) appears from 3's list
        neighbors = [[], [(2, 1.0)], [(1, 1.0)], [(1, 0.5)]]
        a = build_case_edges(neighbors, 4)
        expected = np.zeros((4, 4), dtype=np.uint8)
        for i, j in [(1, 2), (1, 3)]:
            expected[i, j] = expected[j, i] = 1
        assert np.array_equal(a, expected)

    def test_full_lists_complete_graph(self):
        n = 5
        neighbors = [
            [(j, 1.0) for j in range(n) if j != i] for i in range(n)
        ]
        a = build_case_edges(neighbors, n)
        assert np.array_equal(a, np.ones((n, n), np.uint8) - np.eye(n, dtype=np.uint8))

    def test_empty_lists_zero_matrix(self):
        assert np.all(build_case_edges([[], [], []], 3) == 0)

    def test_topk_monotone_in_k(self, synth7):
        index = build_index(synth7["train_corpus"])
        n = len(synth7["train_corpus"])
        a3 = build_case_edges(pairwise_topk(index, 3), n)
        a5 = build_case_edges(pairwise_topk(index, 5), n)
        assert np.all(a3 <= a5)

    def test_min_degree_k(self, synth7):
        index = build_index(synth7["train_corpus"])
        n = len(synth7["train_corpus"])
        k = 3
        a = build_case_edges(pairwise_topk(index, k), n)
        assert np.all(a.sum(axis=1) >= k)


class TestChargeEdges:
    def test_delta_one_no_edges(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(6, 8))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        assert np.all(build_charge_edges(feats, delta=1.0) == 0)

    def test_identical_vectors_edge(self):
        v = np.zeros((2, 4), dtype=np.float64)
        v[:, 0] = 1.0
        a = build_charge_edges(v, delta=0.9)
        assert a[0, 1] == 1 and a[1, 0] == 1
        assert a[0, 0] == 0 and a[1, 1] == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        feats = rng.normal(size=(20, 16))
        for delta in (0.0, 0.3, 0.85):
            a = build_charge_edges(feats, delta=delta)
            m = feats.shape[0]
            for i in range(m):
                for j in range(m):
                    if i == j:
                        assert a[i, j] == 0
                        continue
                    ni, nj = np.linalg.norm(feats[i]), np.linalg.norm(feats[j])
                    cos = float(feats[i] @ feats[j] / (ni * nj))
                    assert a[i, j] == (1 if cos > delta else 0)

    def test_zero_vector_similarity_zero(self, caplog):
        feats = np.zeros((3, 4))
        feats[0, 0] = 1.0
        feats[1, 0] = 1.0
        a = build_charge_edges(feats, delta=0.5)
        assert a[0, 1] == 1
        assert np.all(a[2] == 0) and np.all(a[:, 2] == 0)

    def test_dot_similarity(self):
        feats = np.array([[2.0, 0.0], [1.5, 0.0], [0.0, 0.1]])
        a = build_charge_edges(feats, delta=1.0, sim=Similarity.DOT)
        assert a[0, 1] == 1  # dot = 3.0
        assert a[0, 2] == 0


class TestCaseChargeEdges:
    def test_substring_hit(self):
        corpus = _corpus(["claim under the income tax act"])
        a = build_case_charge_edges(corpus, _charges("income tax act"))
        assert a[0, 0] == 1

    def test_substring_semantics_inside_word(self):
        corpus = _corpus(["patently obvious"])
        a = build_case_charge_edges(corpus, _charges("patent"))
        assert a[0, 0] == 1

    def test_token_boundary_flag(self):
        corpus = _corpus(["patently obvious", "a patent case"])
        a = build_case_charge_edges(corpus, _charges("patent"), token_boundary=True)
        assert a[0, 0] == 0
        assert a[0, 1] == 1

    def test_absent(self):
        corpus = _corpus(["nothing to see"])
        a = build_case_charge_edges(corpus, _charges("patent"))
        assert a[0, 0] == 0


class TestCompose:
    def test_symmetric_and_transpose_pair(self):
        a_case = np.zeros((2, 2), np.uint8)
        a_charge = np.zeros((1, 1), np.uint8)
        a_bridge = np.array([[1, 0]], dtype=np.uint8)  # charge c1 - case d0
        a = compose(a_case, a_charge, a_bridge)
        assert np.array_equal(a, a.T)
        assert a.sum() == 2
        assert a[2, 0] == 1 and a[0, 2] == 1

    def test_matches_naive_block_assembly(self):
        rng = np.random.default_rng(4)
        n, m = 7, 3
        a_case = np.triu((rng.random((n, n)) < 0.4).astype(np.uint8), 1)
        a_case = a_case | a_case.T
        a_charge = np.triu((rng.random((m, m)) < 0.4).astype(np.uint8), 1)
        a_charge = a_charge | a_charge.T
        a_bridge = (rng.random((m, n)) < 0.4).astype(np.uint8)
        a = compose(a_case, a_charge, a_bridge)
        naive = np.zeros((n + m, n + m), dtype=np.uint8)
        for i in range(n):
            for j in range(n):
                naive[i, j] = a_case[i, j]
        for i in range(m):
            for j in range(m):
                naive[n + i, n + j] = a_charge[i, j]
        for i in range(m):
            for j in range(n):
                naive[n + i, j] = a_bridge[i, j]
                naive[j, n + i] = a_bridge[i, j]
        assert np.array_equal(a, naive)

    def test_bad_bridge_shape(self):
        with pytest.raises(ValidationError):
            compose(np.zeros((2, 2), np.uint8), np.zeros((1, 1), np.uint8),
                    np.zeros((2, 2), np.uint8))


class TestBuildGraph:
    def test_full_graph_structure(self, synth7):
        corpus = synth7["train_corpus"]
        charges = synth7["charges"]
        feats = assemble_features(corpus, charges, dim=64, seed=7)
        index = build_index(corpus)
        neighbors = pairwise_topk(index, 5)
        graph = build_graph(corpus, charges, feats, neighbors, GcgConfig(k=5))
        assert graph.n == 60 and graph.m == 8
        assert np.array_equal(graph.a, graph.a.T)
        assert np.all(np.diag(graph.a) == 0)
        # every synthetic document mentions exactly one charge phrase
        assert graph.a_bridge.sum(axis=0).min() >= 1

    def test_repeat_runs_identical(self, synth7):
        corpus = synth7["train_corpus"]
        charges = synth7["charges"]
        feats = assemble_features(corpus, charges, dim=64, seed=7)
        index = build_index(corpus)
        neighbors = pairwise_topk(index, 5)
        g1 = build_graph(corpus, charges, feats, neighbors, GcgConfig())
        g2 = build_graph(corpus, charges, feats, neighbors, GcgConfig())
        assert np.array_equal(g1.a, g2.a)

    def test_case_case_only(self, synth7):
        corpus = synth7["train_corpus"]
        charges = synth7["charges"]
        feats = assemble_features(corpus, charges, dim=64, seed=7)
        index = build_index(corpus)
        neighbors = pairwise_topk(index, 5)
        graph = build_graph(
            corpus, charges, feats, neighbors, GcgConfig(include_charges=False)
        )
        assert graph.m == 0
        assert np.array_equal(graph.a, graph.a_case)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            GcgConfig(k=0)
        with pytest.raises(ValidationError):
            GcgConfig(delta=1.5)
