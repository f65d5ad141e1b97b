"""Seedable image augmentation engine and multi-crop views."""

from . import functional
from .functional import as_image
from .policy import DEFAULT_PARAMS, PRESETS, AugPolicy, TransformSpec, preset
from .transforms import (
    affine,
    color_jitter,
    gaussian_blur,
    grayscale,
    horizontal_flip,
    posterize,
    random_resized_crop,
    solarize,
)
from .views import ViewSet, make_view, make_views

__all__ = [
    "functional",
    "as_image",
    "AugPolicy",
    "TransformSpec",
    "DEFAULT_PARAMS",
    "PRESETS",
    "preset",
    "ViewSet",
    "make_view",
    "make_views",
    "random_resized_crop",
    "horizontal_flip",
    "color_jitter",
    "grayscale",
    "gaussian_blur",
    "solarize",
    "posterize",
    "affine",
]
