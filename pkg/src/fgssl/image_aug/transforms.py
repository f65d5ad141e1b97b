"""Random augmentations.

Each transform takes an explicit ``np.random.Generator`` and an application
probability ``p``.  The Bernoulli draw for ``p`` always comes first, then the
parameter draws, so the stream consumption of a transform is fixed for a given
outcome.  When ``log`` is a list, one provenance record is appended per call.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from . import functional as F


def _record(log, name: str, applied: bool, **params) -> None:
    if log is not None:
        log.append({"name": name, "applied": bool(applied), **params})


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"probability must be in [0, 1], got {p}")


def _coin(rng: np.random.Generator, p: float) -> bool:
    _check_p(p)
    return bool(rng.random() < p)


def sample_crop_box(
    rng: np.random.Generator,
    height: int,
    width: int,
    scale: tuple[float, float],
    ratio: tuple[float, float] = (3 / 4, 4 / 3),
    attempts: int = 10,
) -> tuple[int, int, int, int]:
    """Draw ``(top, left, h, w)``: area fraction uniform in ``scale``, log-uniform aspect.

    Falls back to the largest centred box within ``ratio`` after ``attempts`` misses.
    """
    lo, hi = scale
    if not (0.0 < lo <= hi <= 1.0):
        raise InvalidInputError(f"crop scale must satisfy 0 < lo <= hi <= 1, got {scale}")
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        target = area * rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    in_ratio = width / height
    if in_ratio < ratio[0]:
        w = width
        h = int(round(w / ratio[0]))
    elif in_ratio > ratio[1]:
        h = height
        w = int(round(h * ratio[1]))
    else:
        w, h = width, height
    return (height - h) // 2, (width - w) // 2, h, w


def random_resized_crop(
    img: np.ndarray,
    rng: np.random.Generator,
    scale: tuple[float, float],
    out: int,
    ratio: tuple[float, float] = (3 / 4, 4 / 3),
    log: list | None = None,
) -> np.ndarray:
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise InvalidInputError(f"image must be at least 2x2 to crop, got {img.shape[:2]}")
    if out < 2:
        raise InvalidInputError(f"crop output size must be >= 2, got {out}")
    box = sample_crop_box(rng, img.shape[0], img.shape[1], scale, ratio)
    _record(log, "crop", True, box=list(box), out=int(out))
    return F.resized_crop(img, box, out)


def horizontal_flip(img: np.ndarray, rng: np.random.Generator, p: float = 0.5, log: list | None = None) -> np.ndarray:
    applied = _coin(rng, p)
    _record(log, "flip", applied)
    return F.hflip(img) if applied else img


def sample_jitter(
    rng: np.random.Generator, strengths: Sequence[float]
) -> tuple[dict, list[str]]:
    """Draw jitter factors and a random op order.  Zero-strength ops are dropped."""
    if len(strengths) != 4 or any(s < 0 for s in strengths):
        raise InvalidInputError(f"jitter needs 4 non-negative strengths, got {strengths}")
    b, c, s, h = (float(v) for v in strengths)
    if h > 0.5:
        raise InvalidInputError(f"hue strength must be <= 0.5, got {h}")
    factors = {}
    for name, strength in (("brightness", b), ("contrast", c), ("saturation", s)):
        if strength > 0:
            factors[name] = float(rng.uniform(max(0.0, 1.0 - strength), 1.0 + strength))
    if h > 0:
        factors["hue"] = float(rng.uniform(-h, h))
    order = [F.JITTER_OPS[i] for i in rng.permutation(len(F.JITTER_OPS))]
    return factors, [name for name in order if name in factors]


def color_jitter(
    img: np.ndarray,
    rng: np.random.Generator,
    strengths: Sequence[float] = (0.4, 0.4, 0.4, 0.1),
    p: float = 0.8,
    log: list | None = None,
) -> np.ndarray:
    applied = _coin(rng, p)
    if not applied:
        _record(log, "jitter", False)
        return img
    factors, order = sample_jitter(rng, strengths)
    _record(log, "jitter", True, factors=factors, order=order)
    return F.jitter(img, factors, order)


def grayscale(img: np.ndarray, rng: np.random.Generator, p: float = 0.2, log: list | None = None) -> np.ndarray:
    applied = _coin(rng, p)
    _record(log, "grayscale", applied)
    return F.to_grayscale(img) if applied else img


def gaussian_blur(
    img: np.ndarray,
    rng: np.random.Generator,
    sigma_range: tuple[float, float] = (0.1, 2.0),
    p: float = 0.5,
    log: list | None = None,
) -> np.ndarray:
    lo, hi = sigma_range
    if not 0 < lo <= hi:
        raise InvalidInputError(f"sigma range must be positive and ordered, got {sigma_range}")
    applied = _coin(rng, p)
    if not applied:
        _record(log, "blur", False)
        return img
    sigma = float(rng.uniform(lo, hi))
    _record(log, "blur", True, sigma=sigma)
    return F.blur(img, sigma)


def solarize(
    img: np.ndarray,
    rng: np.random.Generator,
    threshold: float = 0.5,
    p: float = 0.2,
    log: list | None = None,
) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"solarize threshold must be in [0, 1], got {threshold}")
    applied = _coin(rng, p)
    _record(log, "solarize", applied, threshold=float(threshold))
    return F.solarize(img, threshold) if applied else img


def posterize(
    img: np.ndarray,
    rng: np.random.Generator,
    bits_range: tuple[int, int] = (4, 7),
    p: float = 0.2,
    log: list | None = None,
) -> np.ndarray:
    lo, hi = (int(b) for b in bits_range)
    if not 1 <= lo <= hi <= 8:
        raise InvalidInputError(f"posterize bits must satisfy 1 <= lo <= hi <= 8, got {bits_range}")
    applied = _coin(rng, p)
    if not applied:
        _record(log, "posterize", False)
        return img
    bits = int(rng.integers(lo, hi + 1))
    _record(log, "posterize", True, bits=bits)
    return F.posterize(img, bits)


def sample_affine(
    rng: np.random.Generator,
    height: int,
    width: int,
    max_rotation: float,
    max_translate: float,
    scale_range: tuple[float, float],
    max_shear: float,
) -> dict:
    if max_rotation < 0 or max_shear < 0 or not 0 <= max_translate <= 1:
        raise InvalidInputError("affine ranges must be non-negative, translate <= 1")
    if not 0 < scale_range[0] <= scale_range[1]:
        raise InvalidInputError(f"affine scale range must be positive and ordered, got {scale_range}")
    angle = float(rng.uniform(-max_rotation, max_rotation))
    tx = float(rng.uniform(-max_translate, max_translate)) * width
    ty = float(rng.uniform(-max_translate, max_translate)) * height
    scale = float(rng.uniform(*scale_range))
    shear = float(rng.uniform(-max_shear, max_shear))
    return {"angle": angle, "translate": (tx, ty), "scale": scale, "shear": shear}


def affine(
    img: np.ndarray,
    rng: np.random.Generator,
    max_rotation: float = 15.0,
    max_translate: float = 0.1,
    scale_range: tuple[float, float] = (0.9, 1.1),
    max_shear: float = 10.0,
    p: float = 0.5,
    log: list | None = None,
) -> np.ndarray:
    applied = _coin(rng, p)
    if not applied:
        _record(log, "affine", False)
        return img
    params = sample_affine(rng, img.shape[0], img.shape[1], max_rotation, max_translate, scale_range, max_shear)
    _record(log, "affine", True, **{k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()})
    return F.warp_affine(img, **params)
