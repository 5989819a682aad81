"""Linear embedding training with a hinge triplet loss.

Each query acts as an anchor; items on its relevance list are positives,
everything else in the candidate pool is a negative.  The model is a pure
linear map f(x) = W x (no bias, no activation) and the loss over a batch is

    sum over (a, p, n) of  max(0, m + D(f(a), f(p)) - D(f(a), f(n)))

with D the squared Euclidean distance and margin m (default 1.0).  The
gradient of one active triple is 2 W (dp dp^T - dn dn^T) with dp = x_a -
x_p and dn = x_a - x_n; triples sitting exactly on the hinge kink
contribute zero.  Optimization is plain mini-batch SGD with per-epoch
triplet resampling, bit-deterministic for a fixed config.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import FeatureSet, RelevanceTable, _Cursor

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CBVM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int
    margin: float = 1.0
    learning_rate: float = 1.0
    epochs: int = 4
    triplets_per_anchor: int = 5
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.margin < 0.0 or not math.isfinite(self.margin):
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.learning_rate <= 0.0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.triplets_per_anchor < 1:
            raise ValueError(f"triplets_per_anchor must be positive, got {self.triplets_per_anchor}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class TrainMeta:
    """Provenance carried by a model; learning_rate is None for models
    loaded from disk (the file format does not store it)."""

    margin: float
    learning_rate: float | None
    epochs: int
    seed: int


@dataclass(eq=False)
class EmbeddingModel:
    """A learned linear map, weight shape (embed_dim, input_dim), float32.

    ``loss_history`` (training-time only, not persisted) holds the
    per-triple mean loss of the first epoch's batch before any update,
    then after each epoch.
    """

    weight: np.ndarray
    input_dim: int
    embed_dim: int
    train_meta: TrainMeta
    loss_history: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        weight = np.array(self.weight, dtype=np.float32)
        if weight.shape != (self.embed_dim, self.input_dim):
            raise ValueError(
                f"weight shape {weight.shape} does not match "
                f"(embed_dim={self.embed_dim}, input_dim={self.input_dim})"
            )
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ValueError("input_dim and embed_dim must be positive")
        if weight.size and not np.all(np.isfinite(weight)):
            raise ValueError("weight contains a non-finite value")
        weight.flags.writeable = False
        self.weight = weight

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.embed_dim == other.embed_dim
            and self.train_meta == other.train_meta
            and self.weight.tobytes() == other.weight.tobytes()
        )


@dataclass
class TripletBatch:
    """(anchor, positive, negative) id triples, plus how many anchors had to
    be skipped because no valid negative existed."""

    triples: list[tuple[str, str, str]]
    skipped_anchors: int = 0

    def __len__(self) -> int:
        return len(self.triples)


def _require_pooled_cover(table: RelevanceTable, features: FeatureSet) -> None:
    if not features.pooled:
        raise ValueError("training requires a pooled feature set (run mean_pool first)")
    needed: set[str] = set(table.candidate_ids)
    needed.update(table.entries.keys())
    for members in table.entries.values():
        needed.update(members)
    missing = sorted(needed - set(features.items.keys()))
    if missing:
        raise ValueError(f"{len(missing)} table ids have no feature vector: {missing[:10]}")


def sample_triplets(
    table: RelevanceTable,
    features: FeatureSet,
    config: TrainConfig,
    rng: np.random.Generator,
) -> TripletBatch:
    """Draw up to ``triplets_per_anchor`` triples per anchor.

    Positives come uniformly without replacement from the anchor's
    relevance list, negatives uniformly without replacement from the
    candidate pool minus the anchor and its list; the i-th positive pairs
    with the i-th negative.  Anchors with an empty list yield no triples;
    anchors with no valid negative are skipped and counted.
    """
    _require_pooled_cover(table, features)
    triples: list[tuple[str, str, str]] = []
    skipped = 0
    for anchor, positives in table.entries.items():
        if not positives:
            continue
        excluded = set(positives)
        excluded.add(anchor)
        pool = [c for c in table.candidate_ids if c not in excluded]
        if not pool:
            skipped += 1
            continue
        n = min(config.triplets_per_anchor, len(positives), len(pool))
        pos_pick = rng.choice(len(positives), size=n, replace=False)
        neg_pick = rng.choice(len(pool), size=n, replace=False)
        triples.extend(
            (anchor, positives[int(p)], pool[int(q)]) for p, q in zip(pos_pick, neg_pick)
        )
    if skipped:
        logger.warning("sample_triplets: skipped %d anchors with no valid negative", skipped)
    return TripletBatch(triples, skipped)


def _gather_rows(
    batch: TripletBatch, features: FeatureSet
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    anchors = features.matrix([t[0] for t in batch.triples]).astype(np.float64)
    positives = features.matrix([t[1] for t in batch.triples]).astype(np.float64)
    negatives = features.matrix([t[2] for t in batch.triples]).astype(np.float64)
    return anchors, positives, negatives


def _hinge_args(w: np.ndarray, xa: np.ndarray, xp: np.ndarray, xn: np.ndarray, margin: float) -> np.ndarray:
    ea, ep, en = xa @ w.T, xp @ w.T, xn @ w.T
    d_pos = ((ea - ep) ** 2).sum(axis=1)
    d_neg = ((ea - en) ** 2).sum(axis=1)
    return margin + d_pos - d_neg


def _loss(w: np.ndarray, xa: np.ndarray, xp: np.ndarray, xn: np.ndarray, margin: float) -> float:
    return float(np.maximum(_hinge_args(w, xa, xp, xn, margin), 0.0).sum())


def _gradient(w: np.ndarray, xa: np.ndarray, xp: np.ndarray, xn: np.ndarray, margin: float) -> np.ndarray:
    active = _hinge_args(w, xa, xp, xn, margin) > 0.0
    if not active.any():
        return np.zeros_like(w)
    dp = (xa - xp)[active]
    dn = (xa - xn)[active]
    return 2.0 * (w @ (dp.T @ dp - dn.T @ dn))


def triplet_loss(
    batch: TripletBatch, features: FeatureSet, model: EmbeddingModel, margin: float
) -> float:
    """Total hinge loss of the batch under the model (0 for an empty batch)."""
    if model.input_dim != features.dim:
        raise ValueError(f"dimension mismatch: model {model.input_dim}, features {features.dim}")
    if not batch.triples:
        return 0.0
    xa, xp, xn = _gather_rows(batch, features)
    return _loss(model.weight.astype(np.float64), xa, xp, xn, margin)


def loss_gradient(
    batch: TripletBatch, features: FeatureSet, model: EmbeddingModel, margin: float
) -> np.ndarray:
    """d(loss)/dW, shape (embed_dim, input_dim); inactive triples contribute
    zero, as does a hinge argument of exactly zero."""
    if model.input_dim != features.dim:
        raise ValueError(f"dimension mismatch: model {model.input_dim}, features {features.dim}")
    if not batch.triples:
        return np.zeros((model.embed_dim, model.input_dim))
    xa, xp, xn = _gather_rows(batch, features)
    return _gradient(model.weight.astype(np.float64), xa, xp, xn, margin)


def train(table: RelevanceTable, features: FeatureSet, config: TrainConfig) -> EmbeddingModel:
    """Mini-batch SGD over per-epoch resampled triplets.

    W starts as i.i.d. uniform on [-s, s] with s = sqrt(6 / (input_dim +
    embed_dim)); each epoch resamples and shuffles triplets from the seeded
    stream and applies W <- W - lr * grad(batch) / |batch|.  The returned
    weights are rounded once to float32, making the run bit-reproducible.
    """
    _require_pooled_cover(table, features)
    rng = np.random.default_rng(config.seed)
    input_dim = features.dim
    scale = math.sqrt(6.0 / (input_dim + config.embed_dim))
    w = rng.uniform(-scale, scale, size=(config.embed_dim, input_dim))

    ids = features.ids
    row_of = {item_id: i for i, item_id in enumerate(ids)}
    x = features.matrix().astype(np.float64)

    losses: list[float] = []
    for epoch in range(config.epochs):
        batch = sample_triplets(table, features, config, rng)
        if not batch.triples:
            raise ValueError("no training signal: no valid triples could be sampled")
        order = rng.permutation(len(batch.triples))
        ia = np.asarray([row_of[batch.triples[i][0]] for i in order])
        ip = np.asarray([row_of[batch.triples[i][1]] for i in order])
        im = np.asarray([row_of[batch.triples[i][2]] for i in order])
        if epoch == 0:
            losses.append(_loss(w, x[ia], x[ip], x[im], config.margin) / len(ia))
        for start in range(0, len(ia), config.batch_size):
            sel = slice(start, start + config.batch_size)
            count = len(ia[sel])
            grad = _gradient(w, x[ia[sel]], x[ip[sel]], x[im[sel]], config.margin)
            w -= config.learning_rate * grad / count
        losses.append(_loss(w, x[ia], x[ip], x[im], config.margin) / len(ia))

    meta = TrainMeta(
        margin=config.margin,
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        seed=config.seed,
    )
    return EmbeddingModel(
        weight=w.astype(np.float32),
        input_dim=input_dim,
        embed_dim=config.embed_dim,
        train_meta=meta,
        loss_history=tuple(losses),
    )


def embed(model: EmbeddingModel, feature_set: FeatureSet) -> FeatureSet:
    """Map every pooled vector through W, preserving item order."""
    if not feature_set.pooled:
        raise ValueError("embed requires a pooled feature set")
    if feature_set.dim != model.input_dim:
        raise ValueError(
            f"dimension mismatch: model expects {model.input_dim}, features have {feature_set.dim}"
        )
    x = feature_set.matrix().astype(np.float64)
    out = (x @ model.weight.astype(np.float64).T).astype(np.float32)
    items = {item_id: out[i : i + 1] for i, item_id in enumerate(feature_set.ids)}
    return FeatureSet(model.embed_dim, items, pooled=True)


# ---------------------------------------------------------------------------
# .cbvm model file
# ---------------------------------------------------------------------------

_MODEL_HEADER = struct.Struct("<4sBIIfIQ")  # magic, version, in, out, margin, epochs, seed


def save_model(model: EmbeddingModel, path: str | Path) -> None:
    meta = model.train_meta
    buf = bytearray(
        _MODEL_HEADER.pack(
            MODEL_MAGIC,
            MODEL_VERSION,
            model.input_dim,
            model.embed_dim,
            meta.margin,
            meta.epochs,
            meta.seed,
        )
    )
    buf += model.weight.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_model(path: str | Path) -> EmbeddingModel:
    cur = _Cursor(Path(path).read_bytes(), path)
    magic = cur.take(4, "magic")
    if magic != MODEL_MAGIC:
        cur.fail(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", offset=0)
    version = cur.take(1, "version")[0]
    if version != MODEL_VERSION:
        cur.fail(f"unsupported version {version}", offset=4)
    input_dim = cur.u32("input dimension")
    embed_dim = cur.u32("embedding dimension")
    margin = struct.unpack("<f", cur.take(4, "margin"))[0]
    epochs = cur.u32("epoch count")
    seed = struct.unpack("<Q", cur.take(8, "seed"))[0]
    if input_dim < 1 or embed_dim < 1:
        cur.fail("dimensions must be positive", offset=5)
    if not math.isfinite(margin) or margin < 0.0:
        cur.fail(f"invalid margin {margin}", offset=13)
    payload_start = cur.offset
    payload = cur.take(embed_dim * input_dim * 4, "weight payload")
    if cur.offset != len(cur.data):
        cur.fail(f"{len(cur.data) - cur.offset} bytes of trailing data")
    weight = np.frombuffer(payload, dtype="<f4").reshape(embed_dim, input_dim)
    finite = np.isfinite(weight.ravel())
    if not finite.all():
        bad = int(np.argmin(finite))
        cur.fail("non-finite weight", offset=payload_start + 4 * bad)
    meta = TrainMeta(margin=float(margin), learning_rate=None, epochs=epochs, seed=seed)
    return EmbeddingModel(
        weight=weight, input_dim=input_dim, embed_dim=embed_dim, train_meta=meta
    )
