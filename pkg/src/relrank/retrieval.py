"""Similarity scoring, top-K ranking, and late fusion.

The default channel score is cosine similarity between pooled vectors
(applied to raw features for the unsupervised baseline, or to embedded
features for a trained model).  Negative squared Euclidean distance is
available as an alternative ranking score.  Fusing channels is an
entrywise weighted mean of their score matrices; uniform weights reproduce
a plain average.

Rankings are fully deterministic: score ties break by ascending candidate
id (UTF-8 byte order).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import (
    FeatureSet,
    FormatError,
    PredictionTable,
    _Cursor,
    item_id_problem,
    validate_item_id,
)

SIMILARITY_MAGIC = b"CBVS"
SIMILARITY_VERSION = 1

METRIC_COSINE = "cosine"
METRIC_NEG_EUCLIDEAN = "neg-euclidean"
METRICS = (METRIC_COSINE, METRIC_NEG_EUCLIDEAN)


@dataclass(eq=False)
class SimilarityMatrix:
    """Dense query x candidate score matrix with id registries.

    ``scores[i, j]`` is the similarity of ``query_ids[i]`` to
    ``candidate_ids[j]``; stored as float32, all entries finite.
    """

    query_ids: list[str]
    candidate_ids: list[str]
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.query_ids = list(self.query_ids)
        self.candidate_ids = list(self.candidate_ids)
        for registry, side in ((self.query_ids, "query"), (self.candidate_ids, "candidate")):
            seen: set[str] = set()
            for item_id in registry:
                validate_item_id(item_id)
                if item_id in seen:
                    raise ValueError(f"duplicate {side} id {item_id!r}")
                seen.add(item_id)
        scores = np.array(self.scores, dtype=np.float32)
        if scores.shape != (len(self.query_ids), len(self.candidate_ids)):
            raise ValueError(
                f"scores shape {scores.shape} does not match registries "
                f"({len(self.query_ids)} x {len(self.candidate_ids)})"
            )
        if scores.size and not np.all(np.isfinite(scores)):
            raise ValueError("scores contain a non-finite value")
        scores.flags.writeable = False
        self.scores = scores

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimilarityMatrix):
            return NotImplemented
        return (
            self.query_ids == other.query_ids
            and self.candidate_ids == other.candidate_ids
            and self.scores.shape == other.scores.shape
            and self.scores.tobytes() == other.scores.tobytes()
        )


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """(u . v) / (|u| |v|), clipped to [-1, 1]; zero-norm inputs score 0."""
    ua = np.asarray(u, dtype=np.float64)
    va = np.asarray(v, dtype=np.float64)
    if ua.ndim != 1 or va.ndim != 1 or ua.shape != va.shape:
        raise ValueError(f"dimension mismatch: {ua.shape} vs {va.shape}")
    nu = float(np.linalg.norm(ua))
    nv = float(np.linalg.norm(va))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(ua, va) / (nu * nv), -1.0, 1.0))


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return mat / safe  # zero rows stay zero, scoring 0 against everything


def similarity_matrix(
    queries: FeatureSet,
    candidates: FeatureSet,
    metric: str = METRIC_COSINE,
) -> SimilarityMatrix:
    """Score every query against every candidate.

    Row and column order equal the input sets' iteration order.  Scores are
    computed in float64 and rounded once to float32.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown similarity metric {metric!r}; choose from {METRICS}")
    if not queries.pooled or not candidates.pooled:
        raise ValueError("similarity_matrix requires pooled feature sets")
    if queries.dim != candidates.dim:
        raise ValueError(f"dimension mismatch: queries {queries.dim}, candidates {candidates.dim}")
    q = queries.matrix().astype(np.float64)
    c = candidates.matrix().astype(np.float64)
    if metric == METRIC_COSINE:
        scores = np.clip(_unit_rows(q) @ _unit_rows(c).T, -1.0, 1.0)
    else:
        sq = (q * q).sum(axis=1)[:, None] + (c * c).sum(axis=1)[None, :] - 2.0 * (q @ c.T)
        scores = -np.maximum(sq, 0.0)
    return SimilarityMatrix(queries.ids, candidates.ids, scores.astype(np.float32))


def top_k(matrix: SimilarityMatrix, k: int, exclude_self: bool = True) -> PredictionTable:
    """The k best-scoring candidate ids per query, best first.

    Ties break by ascending candidate id; with ``exclude_self`` the query's
    own id is removed from its candidate pool before selection.  Queries
    with fewer than k candidates get all of them.
    """
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    cand = np.asarray(matrix.candidate_ids, dtype=object)
    by_id = np.argsort(np.asarray(matrix.candidate_ids), kind="stable")
    cand_sorted = cand[by_id]
    scores_sorted = matrix.scores[:, by_id]
    entries: dict[str, list[str]] = {}
    for row, query in enumerate(matrix.query_ids):
        # stable sort on id-ordered columns: ties resolve to the smaller id
        order = np.argsort(-scores_sorted[row], kind="stable")
        picked: list[str] = []
        for j in order:
            candidate = cand_sorted[j]
            if exclude_self and candidate == query:
                continue
            picked.append(candidate)
            if len(picked) == k:
                break
        entries[query] = picked
    return PredictionTable(entries)


def fuse(
    matrices: Sequence[SimilarityMatrix],
    weights: Sequence[float] | None = None,
) -> SimilarityMatrix:
    """Entrywise weighted mean of score matrices sharing identical registries.

    ``weights`` empty or None means uniform weights (a plain average).
    Registries must match exactly; no silent re-alignment by id.
    """
    mats = list(matrices)
    if not mats:
        raise ValueError("fuse needs at least one matrix")
    first = mats[0]
    for i, m in enumerate(mats[1:], start=2):
        if m.query_ids != first.query_ids or m.candidate_ids != first.candidate_ids:
            raise ValueError(f"registry mismatch between matrix 1 and matrix {i}")
    given = None if weights is None else list(weights)
    if not given:
        w = np.full(len(mats), 1.0 / len(mats))
    else:
        w = np.asarray(given, dtype=np.float64)
        if w.shape != (len(mats),):
            raise ValueError(f"{len(mats)} matrices but {w.size} weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        total = float(w.sum())
        if total <= 0.0:
            raise ValueError("all-zero weights")
        w = w / total
    acc = np.zeros(first.scores.shape, dtype=np.float64)
    for weight, m in zip(w, mats):
        acc += weight * m.scores.astype(np.float64)
    return SimilarityMatrix(first.query_ids, first.candidate_ids, acc.astype(np.float32))


# ---------------------------------------------------------------------------
# .cbvs similarity dump
# ---------------------------------------------------------------------------


def save_similarity(matrix: SimilarityMatrix, path: str | Path) -> None:
    buf = bytearray(SIMILARITY_MAGIC)
    buf.append(SIMILARITY_VERSION)
    buf += struct.pack("<II", len(matrix.query_ids), len(matrix.candidate_ids))
    for registry in (matrix.query_ids, matrix.candidate_ids):
        for item_id in registry:
            raw = item_id.encode("utf-8")
            buf += struct.pack("<H", len(raw))
            buf += raw
    buf += matrix.scores.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


def _read_id_block(cur: _Cursor, count: int, side: str) -> list[str]:
    ids: list[str] = []
    for i in range(count):
        start = cur.offset
        length = cur.u16(f"{side} id length")
        raw = cur.take(length, f"{side} id")
        try:
            item_id = raw.decode("utf-8")
        except UnicodeDecodeError:
            cur.fail(f"{side} id is not valid UTF-8", offset=start)
        problem = item_id_problem(item_id)
        if problem is not None:
            cur.fail(f"{side} id: {problem}", offset=start)
        ids.append(item_id)
    return ids


def load_similarity(path: str | Path) -> SimilarityMatrix:
    cur = _Cursor(Path(path).read_bytes(), path)
    magic = cur.take(4, "magic")
    if magic != SIMILARITY_MAGIC:
        cur.fail(f"bad magic {magic!r}, expected {SIMILARITY_MAGIC!r}", offset=0)
    version = cur.take(1, "version")[0]
    if version != SIMILARITY_VERSION:
        cur.fail(f"unsupported version {version}", offset=4)
    rows = cur.u32("row count")
    cols = cur.u32("column count")
    query_ids = _read_id_block(cur, rows, "row")
    candidate_ids = _read_id_block(cur, cols, "column")
    payload_start = cur.offset
    payload = cur.take(rows * cols * 4, "score payload")
    if cur.offset != len(cur.data):
        cur.fail(f"{len(cur.data) - cur.offset} bytes of trailing data")
    scores = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    finite = np.isfinite(scores.ravel())
    if scores.size and not finite.all():
        bad = int(np.argmin(finite))
        cur.fail("non-finite score", offset=payload_start + 4 * bad)
    try:
        return SimilarityMatrix(query_ids, candidate_ids, scores)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
