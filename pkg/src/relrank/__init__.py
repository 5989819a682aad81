"""Content-feature relevance ranking toolkit.

Pipeline: pooled feature vectors -> (optional) triplet-trained linear
embedding -> similarity matrix -> top-K predictions -> recall@K / hit@K
reports, with late fusion across feature channels and a deterministic
synthetic benchmark generator.
"""

from .datamodel import (
    FeatureSet,
    FormatError,
    PredictionTable,
    RelevanceTable,
    load_candidates,
    load_features,
    load_predictions,
    load_relevance,
    mean_pool,
    save_candidates,
    save_features,
    save_predictions,
    save_relevance,
)
from .metrics import (
    DEFAULT_K_HIT,
    DEFAULT_K_RECALL,
    EvalReport,
    evaluate,
    hit_at_k,
    recall_at_k,
)
from .retrieval import (
    SimilarityMatrix,
    cosine_similarity,
    fuse,
    load_similarity,
    save_similarity,
    similarity_matrix,
    top_k,
)
from .synth import SynthConfig, SynthDataset, generate, split_relevance, write_dataset
from .trainer import (
    EmbeddingModel,
    TrainConfig,
    TripletBatch,
    embed,
    load_model,
    loss_gradient,
    sample_triplets,
    save_model,
    train,
    triplet_loss,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_K_HIT",
    "DEFAULT_K_RECALL",
    "EmbeddingModel",
    "EvalReport",
    "FeatureSet",
    "FormatError",
    "PredictionTable",
    "RelevanceTable",
    "SimilarityMatrix",
    "SynthConfig",
    "SynthDataset",
    "TrainConfig",
    "TripletBatch",
    "cosine_similarity",
    "embed",
    "evaluate",
    "fuse",
    "generate",
    "hit_at_k",
    "load_candidates",
    "load_features",
    "load_model",
    "load_predictions",
    "load_relevance",
    "load_similarity",
    "loss_gradient",
    "mean_pool",
    "recall_at_k",
    "sample_triplets",
    "save_candidates",
    "save_features",
    "save_model",
    "save_predictions",
    "save_relevance",
    "save_similarity",
    "similarity_matrix",
    "split_relevance",
    "top_k",
    "train",
    "triplet_loss",
    "write_dataset",
]
