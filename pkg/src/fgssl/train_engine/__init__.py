"""Teacher-student training: masking, EMA, optimisation, checkpointed loops."""

from .engine import (
    TrainConfig,
    TrainState,
    batch_masks,
    batch_views,
    contrastive_train_step,
    effective_rank,
    init_state,
    mean_pairwise_cosine,
    train_step,
)
from .loop import ArrayDataset, TrainResult, batch_indices, load_state, read_metrics, save_state, train_loop
from .optim import AdamW, clip_grads, ema_at, ema_update, global_norm, lr_at, sample_mask

__all__ = [
    "TrainConfig",
    "TrainState",
    "init_state",
    "train_step",
    "contrastive_train_step",
    "batch_views",
    "batch_masks",
    "mean_pairwise_cosine",
    "effective_rank",
    "ArrayDataset",
    "TrainResult",
    "batch_indices",
    "train_loop",
    "save_state",
    "load_state",
    "read_metrics",
    "AdamW",
    "clip_grads",
    "global_norm",
    "lr_at",
    "ema_at",
    "ema_update",
    "sample_mask",
]
