"""Augmentation preview grids."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import rng as rngs
from .image_aug import AugPolicy, TransformSpec, make_views
from .image_aug.functional import as_image, resize_bilinear

LABEL_HEIGHT = 12


def _tile(img: np.ndarray, size: int) -> np.ndarray:
    return resize_bilinear(img, size, size)


def preview_panels(img: np.ndarray, policy: AugPolicy, seed: int, n_global: int = 2, n_local: int = 4, tile: int = 96):
    """``[(label, tile image)]``: original, each preset transform forced on, then sample crops."""
    img = as_image(img)
    panels = [("original", _tile(img, tile))]
    for spec in policy.transforms:
        forced = TransformSpec(spec.name, {**spec.params, "p": 1.0})
        out = forced(img, rngs.stream(seed, "preview", spec.name))
        panels.append((spec.name, _tile(out, tile)))
    views = make_views(img, policy.replace(n_global=max(2, n_global), n_local=n_local), (seed, "preview-views"))
    panels += [(f"global {i}", _tile(v, tile)) for i, v in enumerate(views.global_views[:n_global])]
    panels += [(f"local {i}", _tile(v, tile)) for i, v in enumerate(views.local_views)]
    return panels


def render_grid(panels, columns: int | None = None) -> Image.Image:
    """Lay panels out in rows with a text label above each tile."""
    tile = panels[0][1].shape[0]
    columns = columns or min(len(panels), 6)
    rows = (len(panels) + columns - 1) // columns
    cell_h = tile + LABEL_HEIGHT
    canvas = Image.new("RGB", (columns * tile, rows * cell_h), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for k, (label, arr) in enumerate(panels):
        r, c = divmod(k, columns)
        x, y = c * tile, r * cell_h
        draw.text((x + 2, y), label, fill=(0, 0, 0), font=font)
        pixels = np.floor(np.clip(arr, 0, 1) * 255.0 + 0.5).astype(np.uint8)
        canvas.paste(Image.fromarray(pixels, mode="RGB"), (x, y + LABEL_HEIGHT))
    return canvas
