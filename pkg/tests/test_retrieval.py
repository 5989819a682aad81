"""Similarity matrices, top-K ranking determinism, and fusion."""

from __future__ import annotations

import numpy as np
import pytest

from relrank import (
    FeatureSet,
    FormatError,
    SimilarityMatrix,
    cosine_similarity,
    fuse,
    load_similarity,
    save_similarity,
    similarity_matrix,
    top_k,
)

from conftest import random_feature_set


def pooled_set(vectors: dict[str, list[float]]) -> FeatureSet:
    dim = len(next(iter(vectors.values())))
    return FeatureSet(dim, {k: np.array([v], dtype=np.float32) for k, v in vectors.items()})


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_parallel(self):
        assert cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)

    def test_zero_norm_convention(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 1.0]) == 0.0
        assert cosine_similarity([1.0, 1.0], [0.0, 0.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine_similarity([1.0], [1.0, 2.0])

    def test_antiparallel(self):
        assert cosine_similarity([1.0, 0.0], [-2.0, 0.0]) == pytest.approx(-1.0)


class TestSimilarityMatrix:
    def test_single_item_self_similarity(self):
        fs = pooled_set({"v": [3.0, 4.0]})
        matrix = similarity_matrix(fs, fs)
        np.testing.assert_allclose(matrix.scores, [[1.0]])

    def test_orthonormal_identity(self):
        fs = pooled_set({"x": [1.0, 0.0], "y": [0.0, 1.0]})
        matrix = similarity_matrix(fs, fs)
        np.testing.assert_allclose(matrix.scores, np.eye(2), atol=1e-7)

    def test_cosine_bounds(self, rng):
        for _ in range(10):
            q = random_feature_set(rng, pooled=True)
            c = FeatureSet(
                q.dim,
                {f"c{i}": rng.normal(size=(1, q.dim)).astype(np.float32) for i in range(7)},
            )
            matrix = similarity_matrix(q, c)
            assert np.all(matrix.scores >= -1.0) and np.all(matrix.scores <= 1.0)

    def test_registry_order_matches_input(self):
        q = pooled_set({"b": [1.0], "a": [2.0]})
        matrix = similarity_matrix(q, q)
        assert matrix.query_ids == ["b", "a"]
        assert matrix.candidate_ids == ["b", "a"]

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            similarity_matrix(pooled_set({"a": [1.0]}), pooled_set({"b": [1.0, 2.0]}))

    def test_unpooled_rejected(self):
        multi = FeatureSet(1, {"a": np.array([[1.0], [2.0]])})
        with pytest.raises(ValueError, match="pooled"):
            similarity_matrix(multi, multi)

    def test_neg_euclidean(self):
        fs = pooled_set({"a": [0.0, 0.0], "b": [3.0, 4.0]})
        matrix = similarity_matrix(fs, fs, metric="neg-euclidean")
        np.testing.assert_allclose(matrix.scores, [[0.0, -25.0], [-25.0, 0.0]], atol=1e-5)

    def test_unknown_metric(self):
        fs = pooled_set({"a": [1.0]})
        with pytest.raises(ValueError, match="metric"):
            similarity_matrix(fs, fs, metric="dot")


class TestTopK:
    def test_tie_break_is_lexicographic(self):
        matrix = SimilarityMatrix(
            ["q"], ["c", "b", "a"], np.array([[0.5, 0.5, 0.9]], dtype=np.float32)
        )
        preds = top_k(matrix, 2, exclude_self=False)
        assert preds.entries["q"] == ["a", "b"]

    def test_self_excluded(self):
        matrix = SimilarityMatrix(
            ["q"], ["q", "z"], np.array([[1.0, 0.1]], dtype=np.float32)
        )
        assert top_k(matrix, 1, exclude_self=True).entries["q"] == ["z"]
        # predictions structurally forbid self-retrieval, so skipping the
        # exclusion step on a self-scoring matrix cannot produce a table
        with pytest.raises(ValueError, match="self-reference"):
            top_k(matrix, 1, exclude_self=False)

    def test_exclude_self_false_with_disjoint_registries(self):
        matrix = SimilarityMatrix(
            ["q"], ["a", "z"], np.array([[1.0, 0.1]], dtype=np.float32)
        )
        assert top_k(matrix, 2, exclude_self=False).entries["q"] == ["a", "z"]

    def test_k_larger_than_pool(self):
        matrix = SimilarityMatrix(
            ["q"], ["a", "b"], np.array([[0.2, 0.8]], dtype=np.float32)
        )
        assert top_k(matrix, 10).entries["q"] == ["b", "a"]

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=(4, 30)).astype(np.float32)
        ids = [f"c{i:02d}" for i in range(30)]
        queries = [f"q{i}" for i in range(4)]
        base = top_k(SimilarityMatrix(queries, ids, scores), 7)
        for transform in (lambda s: 2.0 * s + 1.0, np.tanh, lambda s: s**3):
            mapped = top_k(
                SimilarityMatrix(queries, ids, transform(scores.astype(np.float64))), 7
            )
            assert mapped.entries == base.entries

    def test_cosine_scale_invariance(self, rng):
        for _ in range(10):
            fs = random_feature_set(rng, max_items=8, pooled=True)
            base = top_k(similarity_matrix(fs, fs), 5)
            scaled_items = dict(fs.items)
            victim = fs.ids[int(rng.integers(0, len(fs.ids)))]
            # power-of-two scaling keeps float arithmetic bit-exact
            scaled_items[victim] = fs.items[victim] * np.float32(4.0)
            scaled = top_k(similarity_matrix(FeatureSet(fs.dim, scaled_items), fs), 5)
            assert scaled.entries == base.entries

    def test_no_duplicates_no_self(self, rng):
        fs = random_feature_set(rng, max_items=10, pooled=True)
        preds = top_k(similarity_matrix(fs, fs), 6)
        for query, members in preds.entries.items():
            assert query not in members
            assert len(set(members)) == len(members)

    def test_bad_k(self):
        matrix = SimilarityMatrix(["q"], ["a"], np.zeros((1, 1), dtype=np.float32))
        with pytest.raises(ValueError, match="k must be"):
            top_k(matrix, 0)


class TestFuse:
    def _pair(self):
        a = SimilarityMatrix(["q"], ["c"], np.array([[0.2]], dtype=np.float32))
        b = SimilarityMatrix(["q"], ["c"], np.array([[0.6]], dtype=np.float32))
        return a, b

    def test_uniform_average(self):
        a, b = self._pair()
        np.testing.assert_allclose(fuse([a, b]).scores, [[0.4]])

    def test_single_matrix_identity(self):
        a, _ = self._pair()
        assert fuse([a]) == a

    def test_degenerate_weights_select_channel(self):
        a, b = self._pair()
        assert fuse([a, b], weights=[1.0, 0.0]) == a
        assert fuse([a, b], weights=[0.0, 1.0]) == b

    def test_idempotent_on_identical_inputs(self, rng):
        scores = rng.normal(size=(3, 5)).astype(np.float32)
        a = SimilarityMatrix(
            [f"q{i}" for i in range(3)], [f"c{i}" for i in range(5)], scores
        )
        assert fuse([a, a]) == a

    def test_weighted_mean(self):
        a, b = self._pair()
        fused = fuse([a, b], weights=[3.0, 1.0])
        np.testing.assert_allclose(fused.scores, [[0.3]])

    def test_registry_mismatch(self):
        a, _ = self._pair()
        other = SimilarityMatrix(["q"], ["d"], np.array([[0.6]], dtype=np.float32))
        with pytest.raises(ValueError, match="registry mismatch"):
            fuse([a, other])

    def test_bad_weights(self):
        a, b = self._pair()
        with pytest.raises(ValueError, match="all-zero"):
            fuse([a, b], weights=[0.0, 0.0])
        with pytest.raises(ValueError, match="non-negative"):
            fuse([a, b], weights=[1.0, -1.0])
        with pytest.raises(ValueError, match="weights"):
            fuse([a, b], weights=[1.0])

    def test_needs_a_matrix(self):
        with pytest.raises(ValueError, match="at least one"):
            fuse([])


class TestSimilarityDump:
    def test_round_trip(self, tmp_path, rng):
        scores = rng.normal(size=(4, 6)).astype(np.float32)
        matrix = SimilarityMatrix(
            [f"q{i}" for i in range(4)], [f"c{i}" for i in range(6)], scores
        )
        path = tmp_path / "m.cbvs"
        save_similarity(matrix, path)
        assert load_similarity(path) == matrix

    def test_second_save_identical(self, tmp_path, rng):
        scores = rng.normal(size=(3, 3)).astype(np.float32)
        matrix = SimilarityMatrix(["a", "b", "c"], ["a", "b", "c"], scores)
        p1, p2 = tmp_path / "1.cbvs", tmp_path / "2.cbvs"
        save_similarity(matrix, p1)
        save_similarity(load_similarity(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_rejected(self, tmp_path, rng):
        matrix = SimilarityMatrix(["q"], ["c"], rng.normal(size=(1, 1)).astype(np.float32))
        path = tmp_path / "m.cbvs"
        save_similarity(matrix, path)
        broken = tmp_path / "broken.cbvs"
        broken.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(FormatError, match="offset"):
            load_similarity(broken)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.cbvs"
        path.write_bytes(b"XXXX" + bytes(9))
        with pytest.raises(FormatError, match="magic"):
            load_similarity(path)
