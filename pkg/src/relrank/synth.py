"""Deterministic synthetic benchmark with planted cluster structure.

Items live in a latent space: each belongs to a cluster, and its latent
position is the cluster centroid plus Gaussian noise.  Ground-truth
relevance is the latent geometry itself (the M nearest items by latent
distance), while each observed feature channel sees a *fresh* noise draw
pushed through a channel-specific anisotropic linear transform.  Ground
truth is therefore not a deterministic function of any channel's features:
learning has genuine headroom, and the channels carry complementary signal
for fusion.

The anisotropy (a geometric gain spectrum over latent directions) is what
gives a trained linear embedding room to beat raw cosine similarity: raw
cosine is dominated by the high-gain directions, whereas relevance
learning can rebalance them.  Features are globally rescaled to unit
expected squared norm so that distances sit on the scale the default
training margin expects.

Everything is a pure function of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    FeatureSet,
    RelevanceTable,
    save_candidates,
    save_features,
    save_relevance,
)

LATENT_DIM = 16
SPECTRUM_GAIN = 32.0  # gain ratio between strongest and weakest latent direction

SPLIT_NAMES = ("train", "val", "test")
_SPLIT_FRACTIONS = (0.45, 0.10, 0.45)


@dataclass(frozen=True)
class SynthConfig:
    n_items: int = 500
    n_clusters: int = 20
    raw_dim: int = 64
    n_channels: int = 2
    noise_sigma: float = 0.5
    truth_list_len: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_items", "n_clusters", "raw_dim", "n_channels", "truth_list_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.truth_list_len >= self.n_items:
            raise ValueError(
                f"truth_list_len ({self.truth_list_len}) must be smaller than "
                f"n_items ({self.n_items})"
            )
        if self.n_clusters > self.n_items:
            raise ValueError(
                f"n_clusters ({self.n_clusters}) must not exceed n_items ({self.n_items})"
            )
        if self.noise_sigma < 0.0 or not math.isfinite(self.noise_sigma):
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit an unsigned 64-bit integer, got {self.seed}")


@dataclass
class SynthDataset:
    channels: list[FeatureSet]
    relevance: RelevanceTable
    splits: dict[str, str]  # item id -> "train" | "val" | "test"


def _item_ids(n_items: int) -> list[str]:
    width = max(4, len(str(n_items - 1)))
    return [f"item_{i:0{width}d}" for i in range(n_items)]


def generate(config: SynthConfig) -> SynthDataset:
    """Build feature channels, ground truth, and a cluster-balanced split.

    Items are assigned to clusters cyclically (so clusters stay balanced
    and the assignment is independent of the seed); all randomness comes
    from one seeded stream consumed in a fixed order: centroids, truth
    noise, then per channel (transform, channel noise), then split
    shuffles.
    """
    rng = np.random.default_rng(config.seed)
    ids = _item_ids(config.n_items)
    cluster_of = np.arange(config.n_items) % config.n_clusters

    centroids = rng.normal(size=(config.n_clusters, LATENT_DIM))
    latent = centroids[cluster_of] + config.noise_sigma * rng.normal(
        size=(config.n_items, LATENT_DIM)
    )

    spectrum = SPECTRUM_GAIN ** (np.arange(LATENT_DIM) / (LATENT_DIM - 1))
    # unit expected squared feature norm: E|x|^2 = (1 + sigma^2) * sum(spectrum^2)
    feature_scale = 1.0 / math.sqrt(
        (1.0 + config.noise_sigma**2) * float((spectrum**2).sum())
    )
    channels: list[FeatureSet] = []
    for _ in range(config.n_channels):
        transform = rng.normal(size=(config.raw_dim, LATENT_DIM)) / math.sqrt(config.raw_dim)
        transform = transform * spectrum[None, :]
        observed = centroids[cluster_of] + config.noise_sigma * rng.normal(
            size=(config.n_items, LATENT_DIM)
        )
        vectors = (observed @ transform.T) * feature_scale
        items = {item_id: vectors[i : i + 1] for i, item_id in enumerate(ids)}
        channels.append(FeatureSet(config.raw_dim, items, pooled=True))

    entries: dict[str, list[str]] = {}
    index = np.arange(config.n_items)
    for i in range(config.n_items):
        delta = latent - latent[i]
        dist_sq = (delta * delta).sum(axis=1)
        order = np.lexsort((index, dist_sq))  # distance, then ascending id
        nearest = [ids[j] for j in order if j != i][: config.truth_list_len]
        entries[ids[i]] = nearest
    relevance = RelevanceTable(entries, list(ids))

    label_of: dict[str, str] = {}
    for cluster in range(config.n_clusters):
        members = [ids[i] for i in range(config.n_items) if cluster_of[i] == cluster]
        shuffled = [members[j] for j in rng.permutation(len(members))]
        n = len(shuffled)
        t_train = int(_SPLIT_FRACTIONS[0] * n + 0.5)
        t_val = int((_SPLIT_FRACTIONS[0] + _SPLIT_FRACTIONS[1]) * n + 0.5)
        for item_id in shuffled[:t_train]:
            label_of[item_id] = "train"
        for item_id in shuffled[t_train:t_val]:
            label_of[item_id] = "val"
        for item_id in shuffled[t_val:]:
            label_of[item_id] = "test"
    splits = {item_id: label_of[item_id] for item_id in ids}

    return SynthDataset(channels=channels, relevance=relevance, splits=splits)


def split_relevance(dataset: SynthDataset, split: str) -> RelevanceTable:
    """The ground-truth table restricted to queries of one split (lists
    still draw from the full candidate pool)."""
    if split not in SPLIT_NAMES:
        raise ValueError(f"unknown split {split!r}; choose from {SPLIT_NAMES}")
    entries = {
        query: members
        for query, members in dataset.relevance.entries.items()
        if dataset.splits[query] == split
    }
    return RelevanceTable(entries, list(dataset.relevance.candidate_ids))


def save_splits(splits: dict[str, str], path: str | Path) -> None:
    lines = [f"{item_id}\t{label}\n" for item_id, label in splits.items()]
    Path(path).write_bytes("".join(lines).encode("utf-8"))


def load_splits(path: str | Path) -> dict[str, str]:
    splits: dict[str, str] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
            raise ValueError(f"{path}: line {number}: malformed split line {line!r}")
        if parts[0] in splits:
            raise ValueError(f"{path}: line {number}: duplicate item {parts[0]!r}")
        splits[parts[0]] = parts[1]
    return splits


def write_dataset(dataset: SynthDataset, out_dir: str | Path) -> list[Path]:
    """Write channel features, per-split relevance, candidates, and splits.

    Produces ``channel_<i>.cbvf``, ``train.rel`` / ``val.rel`` /
    ``test.rel``, ``candidates.cand``, and ``splits.txt`` under
    ``out_dir``; returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for i, channel in enumerate(dataset.channels):
        path = out / f"channel_{i}.cbvf"
        save_features(channel, path, format="binary")
        written.append(path)
    for split in SPLIT_NAMES:
        path = out / f"{split}.rel"
        save_relevance(split_relevance(dataset, split), path)
        written.append(path)
    cand_path = out / "candidates.cand"
    save_candidates(dataset.relevance.candidate_ids, cand_path)
    written.append(cand_path)
    splits_path = out / "splits.txt"
    save_splits(dataset.splits, splits_path)
    written.append(splits_path)
    return written
