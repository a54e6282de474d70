"""Hierarchical split generation, metric-learning losses and link evaluation."""

from ._splitmetric import (
    Catalog,
    Embeddings,
    SplitmetricError,
    auroc,
    compute_loss,
    cosine_knn,
    evaluate,
    finite_diff_check,
    generate_splits,
    loss_kinds,
    mine_hard_negatives,
    set_thread_limit,
    split_counts,
    synth,
    train,
    verify_splits,
)

__all__ = [
    "Catalog",
    "Embeddings",
    "SplitmetricError",
    "auroc",
    "compute_loss",
    "cosine_knn",
    "evaluate",
    "finite_diff_check",
    "generate_splits",
    "loss_kinds",
    "mine_hard_negatives",
    "set_thread_limit",
    "split_counts",
    "synth",
    "train",
    "verify_splits",
]
