"""Shared helpers: seeded random construction of the core data types."""

from __future__ import annotations

import string

import numpy as np
import pytest

from relrank import FeatureSet, RelevanceTable

_ID_ALPHABET = string.ascii_lowercase + string.digits + "_-."


def random_item_id(rng: np.random.Generator, max_len: int = 12) -> str:
    length = int(rng.integers(1, max_len + 1))
    return "".join(rng.choice(list(_ID_ALPHABET), size=length))


def random_feature_set(
    rng: np.random.Generator,
    max_items: int = 8,
    max_dim: int = 6,
    max_frames: int = 4,
    pooled: bool | None = None,
) -> FeatureSet:
    dim = int(rng.integers(1, max_dim + 1))
    n_items = int(rng.integers(1, max_items + 1))
    items: dict[str, np.ndarray] = {}
    while len(items) < n_items:
        item_id = random_item_id(rng)
        if item_id in items:
            continue
        frames = 1 if pooled else int(rng.integers(1, max_frames + 1))
        items[item_id] = rng.normal(scale=10.0, size=(frames, dim)).astype(np.float32)
    return FeatureSet(dim, items, pooled=pooled)


def random_relevance_table(
    rng: np.random.Generator,
    max_candidates: int = 20,
    max_queries: int = 8,
    allow_empty_lists: bool = True,
) -> RelevanceTable:
    candidates: list[str] = []
    seen: set[str] = set()
    n_cand = int(rng.integers(2, max_candidates + 1))
    while len(candidates) < n_cand:
        item_id = random_item_id(rng)
        if item_id not in seen:
            seen.add(item_id)
            candidates.append(item_id)
    n_queries = int(rng.integers(1, max_queries + 1))
    entries: dict[str, list[str]] = {}
    while len(entries) < n_queries:
        query = random_item_id(rng)
        if query in entries:
            continue
        pool = [c for c in candidates if c != query]
        low = 0 if allow_empty_lists else 1
        size = int(rng.integers(low, len(pool) + 1))
        picks = rng.choice(len(pool), size=size, replace=False)
        entries[query] = [pool[int(i)] for i in picks]
    return RelevanceTable(entries, candidates)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
