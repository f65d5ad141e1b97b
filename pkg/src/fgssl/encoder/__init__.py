"""Tiny Vision Transformer encoder, its autodiff tape and checkpoint format."""

from .checkpoint import load_checkpoint, load_encoder, save_checkpoint
from .vit import (
    EncoderConfig,
    EncoderParams,
    ForwardTrace,
    TokenOutput,
    backward,
    forward,
    forward_trace,
    init_params,
    param_shapes,
)

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "ForwardTrace",
    "TokenOutput",
    "backward",
    "forward",
    "forward_trace",
    "init_params",
    "param_shapes",
    "save_checkpoint",
    "load_checkpoint",
    "load_encoder",
]
