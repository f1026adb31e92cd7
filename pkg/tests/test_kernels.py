import os
import subprocess
import sys

import numpy as np
import pytest

from lexgraph import _kernels


def _random_postings(rng, n_docs=20, n_terms=12):
    df = rng.integers(1, n_docs + 1, size=n_terms)
    indptr = np.zeros(n_terms + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(df)
    docs = np.concatenate(
        [np.sort(rng.choice(n_docs, size=d, replace=False)) for d in df]
    ).astype(np.int64)
    tfs = rng.integers(1, 6, size=int(indptr[-1])).astype(np.float64)
    idf = rng.uniform(0.1, 3.0, size=n_terms)
    denom = rng.uniform(0.5, 2.5, size=n_docs)
    return indptr, docs, tfs, idf, denom


class TestBackendParity:
    """The jit and numpy paths must agree bitwise (same accumulation order)."""

    def test_bm25_scores(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            indptr, docs, tfs, idf, denom = _random_postings(rng)
            terms = rng.choice(len(idf), size=rng.integers(1, 8), replace=False)
            terms = terms.astype(np.int64)
            a = _kernels._bm25_scores_numba(
                terms, indptr, docs, tfs, idf, denom, 1.2, 20
            )
            b = _kernels._bm25_scores_numpy(
                terms, indptr, docs, tfs, idf, denom, 1.2, 20
            )
            assert np.array_equal(a, b)

    def test_scatter_add_rows(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            rows = rng.normal(size=(int(rng.integers(1, 30)), 7))
            idx = rng.integers(0, 9, size=rows.shape[0]).astype(np.int64)
            a = _kernels._scatter_add_rows_numba(rows, idx, 9)
            b = _kernels._scatter_add_rows_numpy(rows, idx, 9)
            assert np.array_equal(a, b)

    def test_segment_reductions(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            e = int(rng.integers(1, 40))
            values = rng.normal(size=e)
            seg = np.sort(rng.integers(0, 6, size=e)).astype(np.int64)
            assert np.array_equal(
                _kernels._segment_max_numba(values, seg, 6),
                _kernels._segment_max_numpy(values, seg, 6),
            )
            assert np.array_equal(
                _kernels._segment_sum_numba(values, seg, 6),
                _kernels._segment_sum_numpy(values, seg, 6),
            )

    def test_bm25_kernel_matches_pure_python_loops(self):
        rng = np.random.default_rng(4)
        indptr, docs, tfs, idf, denom = _random_postings(rng)
        terms = np.array([0, 3, 5], dtype=np.int64)
        got = _kernels.bm25_scores(terms, indptr, docs, tfs, idf, denom, 1.2, 20)
        expected = np.zeros(20)
        for t in terms:
            for p in range(indptr[t], indptr[t + 1]):
                d = docs[p]
                tf = tfs[p]
                expected[d] += idf[t] * (1.2 + 1.0) * tf / (tf + denom[d])
        assert np.allclose(got, expected, atol=1e-12)


class TestBackendSelection:
    def _backend_under_env(self, value):
        env = dict(os.environ)
        if value is None:
            env.pop("LEXGRAPH_KERNELS", None)
        else:
            env["LEXGRAPH_KERNELS"] = value
        out = subprocess.run(
            [sys.executable, "-c", "from lexgraph import _kernels; print(_kernels.BACKEND)"],
            capture_output=True, text=True, env=env,
        )
        return out.returncode, out.stdout.strip(), out.stderr

    def test_default_is_numba(self):
        code, backend, _ = self._backend_under_env(None)
        assert code == 0 and backend == "numba"

    def test_numpy_forced(self):
        code, backend, _ = self._backend_under_env("numpy")
        assert code == 0 and backend == "numpy"

    def test_invalid_value_rejected(self):
        code, _, err = self._backend_under_env("cuda")
        assert code != 0
        assert "LEXGRAPH_KERNELS" in err

    def test_pipeline_identical_across_backends(self, tmp_path):
        """Same seed, both backends: byte-identical checkpoint."""
        script = (
            "import sys\n"
            "from lexgraph.synth import SynthSpec, generate\n"
            "from lexgraph.trainer import TrainConfig, train\n"
            "tr, trl, te, tel, ch = generate(SynthSpec(seed=7))\n"
            "train(tr, ch, trl, TrainConfig(epochs=3), checkpoint_path=sys.argv[1])\n"
        )
        outputs = []
        for backend in ("numba", "numpy"):
            path = tmp_path / f"{backend}.clnk"
            env = dict(os.environ, LEXGRAPH_KERNELS=backend)
            result = subprocess.run(
                [sys.executable, "-c", script, str(path)],
                capture_output=True, text=True, env=env,
            )
            assert result.returncode == 0, result.stderr
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]
