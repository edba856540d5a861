"""Composed image retrieval with fine-grained textual inversion."""

from ._fticir import (
    Error,
    Searcher,
    contrastive_loss,
    image_template,
    map_at_k,
    orthogonal_loss,
    query_template,
    recall_at_k,
    run_cli,
    select_attributes,
    split_caption,
    standardized_caption,
    subset_recall_at_k,
    write_toy_corpus,
)

__all__ = [
    "Error",
    "Searcher",
    "contrastive_loss",
    "image_template",
    "map_at_k",
    "orthogonal_loss",
    "query_template",
    "recall_at_k",
    "run_cli",
    "select_attributes",
    "split_caption",
    "standardized_caption",
    "subset_recall_at_k",
    "write_toy_corpus",
]
