"""Procedural dataset of coloured, textured shapes.

Each class pairs a silhouette with a texture and a hue band; position, size,
rotation, exact colour, texture frequency and the noisy background vary per
image.  Everything is drawn from the hierarchical seed streams, so image ``i``
of a given seed is identical no matter how many images are generated.
"""

from __future__ import annotations

import numpy as np

from . import rng as rngs
from .errors import InvalidInputError
from .image_aug.functional import hsv_to_rgb

CLASSES = (
    ("circle", "hstripes", 0.00),
    ("square", "checker", 0.33),
    ("triangle", "dots", 0.62),
    ("ring", "diagonal", 0.15),
    ("cross", "vstripes", 0.83),
    ("diamond", "noise", 0.50),
)
CLASS_NAMES = tuple(f"{shape}-{tex}" for shape, tex, _ in CLASSES)


def _silhouette(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.hypot(u, v)
    if kind == "circle":
        return r <= 1.0
    if kind == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.8
    if kind == "triangle":
        inside = np.ones_like(u, dtype=bool)
        for ang in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3):
            inside &= (u * np.cos(ang) + v * np.sin(ang)) >= -0.5
        return inside
    if kind == "ring":
        return (r <= 1.0) & (r >= 0.55)
    if kind == "cross":
        return ((np.abs(u) <= 0.3) & (np.abs(v) <= 1.0)) | ((np.abs(v) <= 0.3) & (np.abs(u) <= 1.0))
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= 1.0
    raise InvalidInputError(f"unknown shape {kind!r}")


def _texture(kind: str, u: np.ndarray, v: np.ndarray, freq: float, rng: np.random.Generator) -> np.ndarray:
    if kind == "hstripes":
        return (np.sin(freq * v) > 0).astype(float)
    if kind == "vstripes":
        return (np.sin(freq * u) > 0).astype(float)
    if kind == "diagonal":
        return (np.sin(freq * (u + v) / np.sqrt(2)) > 0).astype(float)
    if kind == "checker":
        return ((np.sin(freq * u) > 0) ^ (np.sin(freq * v) > 0)).astype(float)
    if kind == "dots":
        return ((np.sin(freq * u) * np.sin(freq * v)) > 0.4).astype(float)
    if kind == "noise":
        return rng.random(u.shape)
    raise InvalidInputError(f"unknown texture {kind!r}")


def render(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One ``(size, size, 3)`` float32 image of class ``label``."""
    if not 0 <= label < len(CLASSES):
        raise InvalidInputError(f"label must be in [0, {len(CLASSES)}), got {label}")
    shape, texture, hue = CLASSES[label]
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    radius = size * rng.uniform(0.25, 0.4)
    cy, cx = size / 2 + rng.uniform(-0.12, 0.12, size=2) * size
    theta = rng.uniform(0, 2 * np.pi)
    dx, dy = (xs - cx) / radius, (ys - cy) / radius
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)

    mask = _silhouette(shape, u, v)
    tex = _texture(texture, u, v, rng.uniform(6.0, 10.0), rng)
    hsv = np.empty((size, size, 3))
    hsv[..., 0] = (hue + rng.uniform(-0.04, 0.04)) % 1.0
    hsv[..., 1] = rng.uniform(0.6, 1.0)
    hsv[..., 2] = rng.uniform(0.7, 1.0) * (0.55 + 0.45 * tex)
    fg = hsv_to_rgb(hsv.astype(np.float32)).astype(np.float64)

    bg_level = rng.uniform(0.1, 0.45)
    bg = np.clip(bg_level + rng.normal(0, 0.05, size=(size, size, 1)), 0, 1)
    bg = np.repeat(bg, 3, axis=2)
    img = np.where(mask[..., None], fg, bg)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_shapes(n_per_class: int = 100, size: int = 64, seed: int = 0, n_classes: int = 6):
    """``(images (M, size, size, 3) float32, labels (M,))``, class-major order."""
    if not 1 <= n_classes <= len(CLASSES):
        raise InvalidInputError(f"n_classes must be in [1, {len(CLASSES)}]")
    if n_per_class < 1 or size < 8:
        raise InvalidInputError("need n_per_class >= 1 and size >= 8")
    images, labels = [], []
    for c in range(n_classes):
        for i in range(n_per_class):
            images.append(render(c, size, rngs.stream(seed, "shapes", c, i)))
            labels.append(c)
    return np.stack(images), np.asarray(labels, dtype=np.int64)
