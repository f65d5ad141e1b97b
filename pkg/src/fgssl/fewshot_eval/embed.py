"""Deterministic CLS embedding extraction."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..encoder import EncoderParams, forward
from ..errors import DataError, InvalidInputError
from ..image_aug.functional import as_image, center_crop, resize_shorter
from .table import EmbeddingTable

log = logging.getLogger(__name__)


def eval_resize(resolution: int) -> int:
    """Shorter-side size before the centre crop: 256 for a 224 crop, scaled proportionally."""
    return int(round(resolution * 256 / 224))


def preprocess(img: np.ndarray, resolution: int) -> np.ndarray:
    return center_crop(resize_shorter(as_image(img), eval_resize(resolution)), resolution)


def _embed_one(params: EncoderParams, dataset, i: int, resolution: int):
    try:
        img = dataset.image(i)
    except DataError as exc:
        return None, str(exc)
    z = forward(params, preprocess(img, resolution)).cls.astype(np.float64)
    return z / np.linalg.norm(z), None


def embed_dataset(
    params: EncoderParams, dataset, resolution: int | None = None, workers: int = 1
) -> tuple[EmbeddingTable, list[tuple[str, str]]]:
    """Embed every readable image; returns the table and ``(id, reason)`` for skipped ones.

    ``dataset`` needs ``__len__``, ``image(i)``, ``label(i)`` and ``ids``.
    Images are encoded one at a time so a row never depends on its neighbours,
    and results are collected in dataset order whatever ``workers`` is.
    """
    if len(dataset) == 0:
        raise InvalidInputError("cannot embed an empty dataset")
    if workers < 1:
        raise InvalidInputError(f"workers must be >= 1, got {workers}")
    resolution = resolution or params.config.global_size
    params.config.n_tokens(resolution)

    def job(i):
        return _embed_one(params, dataset, i, resolution)

    if workers == 1:
        results = [job(i) for i in range(len(dataset))]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(len(dataset))))
    rows, labels, ids, skipped = [], [], [], []
    for i, (z, reason) in enumerate(results):
        ident = str(dataset.ids[i])
        if z is None:
            log.warning("skipping %s: %s", ident, reason)
            skipped.append((ident, reason))
            continue
        rows.append(z)
        labels.append(dataset.label(i))
        ids.append(ident)
    if not rows:
        raise DataError("no readable images in the dataset")
    table = EmbeddingTable(np.asarray(rows, dtype=np.float32), np.asarray(labels), ids, normalized=True)
    return table, skipped
