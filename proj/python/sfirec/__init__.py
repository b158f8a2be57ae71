"""Selective fine-grained interaction news recommender."""

from ._sfirec import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    ModelConfig,
    NumericError,
    Recommender,
    auc,
    mrr,
    ndcg,
    synthesize,
    train,
)

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "ModelConfig",
    "NumericError",
    "Recommender",
    "auc",
    "mrr",
    "ndcg",
    "synthesize",
    "train",
]
