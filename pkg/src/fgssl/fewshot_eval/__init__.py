"""Embedding extraction, SimpleShot episodes and kNN evaluation."""

from .embed import embed_dataset, eval_resize, preprocess
from .protocols import (
    Episode,
    EpisodeSpec,
    FewShotResult,
    KnnResult,
    build_prototypes,
    knn_eval,
    knn_predict,
    run_fewshot,
    sample_episode,
    simpleshot_classify,
)
from .table import EmbeddingTable, read_embeddings, read_manifest, write_embeddings, write_manifest

__all__ = [
    "EmbeddingTable",
    "read_embeddings",
    "write_embeddings",
    "read_manifest",
    "write_manifest",
    "embed_dataset",
    "eval_resize",
    "preprocess",
    "Episode",
    "EpisodeSpec",
    "FewShotResult",
    "KnnResult",
    "build_prototypes",
    "simpleshot_classify",
    "sample_episode",
    "run_fewshot",
    "knn_eval",
    "knn_predict",
]
