"""Popularity-contrastive item embeddings with projected linear recommenders."""

from .embedding import (
    item_popularity,
    nce_gradient,
    nce_transform,
    randomized_truncated_svd,
    scale_embeddings,
)
from .models import (
    Hyperparameters,
    Kind,
    TrainedModel,
    coldstart_scores,
    recommend_topk,
    score_user,
    train,
    train_nce_plrec,
    train_nce_plrec_weighted,
    train_nce_svd,
    train_plrec,
    train_pop,
    train_puresvd,
)

__all__ = [
    "item_popularity",
    "nce_gradient",
    "nce_transform",
    "randomized_truncated_svd",
    "scale_embeddings",
    "Hyperparameters",
    "Kind",
    "TrainedModel",
    "coldstart_scores",
    "recommend_topk",
    "score_user",
    "train",
    "train_nce_plrec",
    "train_nce_plrec_weighted",
    "train_nce_svd",
    "train_plrec",
    "train_pop",
    "train_puresvd",
]

__version__ = "0.1.0"
