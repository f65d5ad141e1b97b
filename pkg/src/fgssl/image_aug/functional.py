"""Deterministic image operations.

Images are ``(H, W, 3)`` float32 arrays with values in ``[0, 1]``.  Every
function here is a pure function of its arguments; randomness lives in
:mod:`fgssl.image_aug.transforms`.  Arithmetic is carried out in float64 and
the result is cast back to float32 and clipped to ``[0, 1]``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError

LUMA = (0.299, 0.587, 0.114)


def as_image(img) -> np.ndarray:
    """Validate and convert to a float32 ``(H, W, 3)`` array in ``[0, 1]``."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"image must be at least 1x1, got {arr.shape[:2]}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("image values must lie in [0, 1]")
    return arr


def _finish(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def _linear_taps(n_in: int, n_out: int, start: float = 0.0, length: float | None = None):
    # half-pixel centres, edge clamp; matches align_corners=False
    if length is None:
        length = float(n_in)
    pos = start + (np.arange(n_out, dtype=np.float64) + 0.5) * (length / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel sampling and clamped edges (no antialiasing)."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape[:2]
    y0, y1, fy = _linear_taps(h, out_h)
    x0, x1, fx = _linear_taps(w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    r0, r1 = src[y0], src[y1]
    top = r0[:, x0] * (1 - fx) + r0[:, x1] * fx
    bot = r1[:, x0] * (1 - fx) + r1[:, x1] * fx
    return _finish(top * (1 - fy) + bot * fy)


def crop(img: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    h, w = img.shape[:2]
    if top < 0 or left < 0 or top + height > h or left + width > w or height < 1 or width < 1:
        raise InvalidInputError(
            f"crop box ({top}, {left}, {height}, {width}) outside {h}x{w} image"
        )
    return img[top : top + height, left : left + width]


def resized_crop(img: np.ndarray, box: Sequence[int], out: int) -> np.ndarray:
    """Crop ``box = (top, left, height, width)`` and resize it to ``out x out``."""
    top, left, height, width = (int(v) for v in box)
    return resize_bilinear(crop(img, top, left, height, width), out, out)


def resize_shorter(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h <= w:
        new_h, new_w = size, max(1, int(round(w * size / h)))
    else:
        new_h, new_w = max(1, int(round(h * size / w))), size
    if (new_h, new_w) == (h, w):
        return img.astype(np.float32)
    return resize_bilinear(img, new_h, new_w)


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if size > h or size > w:
        raise InvalidInputError(f"center crop {size} larger than {h}x{w} image")
    top = int(round((h - size) / 2.0))
    left = int(round((w - size) / 2.0))
    return img[top : top + size, left : left + size]


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1])


# ---------------------------------------------------------------------------
# colour


def luma(img: np.ndarray) -> np.ndarray:
    src = np.asarray(img, dtype=np.float64)
    return LUMA[0] * src[..., 0] + LUMA[1] * src[..., 1] + LUMA[2] * src[..., 2]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    gray = luma(img)
    return _finish(np.repeat(gray[..., None], 3, axis=2))


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return _finish(np.asarray(img, dtype=np.float64) * factor)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    """Blend with the mean luma of the whole image."""
    src = np.asarray(img, dtype=np.float64)
    mean = luma(src).mean()
    return _finish(factor * src + (1.0 - factor) * mean)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    src = np.asarray(img, dtype=np.float64)
    gray = luma(src)[..., None]
    return _finish(factor * src + (1.0 - factor) * gray)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    src = np.asarray(img, dtype=np.float64)
    r, g, b = src[..., 0], src[..., 1], src[..., 2]
    maxc = src.max(axis=-1)
    minc = src.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def adjust_hue(img: np.ndarray, offset: float) -> np.ndarray:
    """Rotate hue by ``offset`` turns (``offset`` in ``[-0.5, 0.5]``)."""
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + offset) % 1.0
    return _finish(hsv_to_rgb(hsv))


JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


def jitter(img: np.ndarray, factors: dict, order: Sequence[str]) -> np.ndarray:
    """Apply the jitter ops named in ``order`` with the given factors, clamping after each."""
    out = img
    for name in order:
        if name not in factors:
            continue
        value = factors[name]
        if name == "brightness":
            out = adjust_brightness(out, value)
        elif name == "contrast":
            out = adjust_contrast(out, value)
        elif name == "saturation":
            out = adjust_saturation(out, value)
        elif name == "hue":
            out = adjust_hue(out, value)
        else:
            raise InvalidInputError(f"unknown jitter op {name!r}")
    return _finish(out)


# ---------------------------------------------------------------------------
# filtering / tone


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(src: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * src.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(src, pad, mode="reflect") if src.shape[axis] > 1 else np.pad(src, pad, mode="edge")
    n = src.shape[axis]
    out = np.zeros_like(src)
    index = [slice(None)] * src.ndim
    for j, wgt in enumerate(kernel):
        index[axis] = slice(j, j + n)
        out += wgt * padded[tuple(index)]
    return out


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ``ceil(3 sigma)``, reflect padding."""
    kernel = gaussian_kernel1d(sigma)
    src = np.asarray(img, dtype=np.float64)
    return _finish(_convolve_axis(_convolve_axis(src, kernel, 0), kernel, 1))


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    src = np.asarray(img, dtype=np.float64)
    return _finish(np.where(src >= threshold, 1.0 - src, src))


# guards floor() against k/255*255 landing a hair under k
_BYTE_GUARD = 1e-6


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + _BYTE_GUARD).astype(np.uint8)


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    """Keep the top ``bits`` bits of each 8-bit channel value."""
    if not 1 <= bits <= 8:
        raise InvalidInputError(f"posterize bits must be in [1, 8], got {bits}")
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    q = to_bytes(img) & mask
    return _finish(q.astype(np.float64) / 255.0)


# ---------------------------------------------------------------------------
# geometry


def affine_matrix(angle: float, scale: float, shear: float) -> np.ndarray:
    """Forward 2x2 map in (x, y-down) pixel coordinates.

    Positive ``angle`` turns the picture counter-clockwise as displayed, so a
    90 degree turn equals ``np.rot90``.  ``shear`` is an x-shear in degrees.
    """
    a = math.radians(angle)
    rot = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])
    sh = np.array([[1.0, math.tan(math.radians(shear))], [0.0, 1.0]])
    return scale * rot @ sh


def warp_affine(
    img: np.ndarray,
    angle: float = 0.0,
    translate: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
    shear: float = 0.0,
) -> np.ndarray:
    """Inverse-warp about the image centre with bilinear sampling, zero fill.

    ``translate`` is ``(tx, ty)`` in pixels.
    """
    if scale <= 0:
        raise InvalidInputError(f"affine scale must be positive, got {scale}")
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    inv = np.linalg.inv(affine_matrix(angle, scale, shear))
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx - translate[0]
    dy = ys - cy - translate[1]
    sx = cx + inv[0, 0] * dx + inv[0, 1] * dy
    sy = cy + inv[1, 0] * dx + inv[1, 1] * dy
    return _finish(sample_bilinear_zero(src, sx, sy))


def sample_bilinear_zero(src: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``src`` at real coordinates; neighbours outside the image read as 0."""
    h, w = src.shape[:2]
    # snap round-off so exact integer maps (e.g. 90 degree turns) stay exact
    rx, ry = np.round(sx), np.round(sy)
    sx = np.where(np.abs(sx - rx) < 1e-9, rx, sx)
    sy = np.where(np.abs(sy - ry) < 1e-9, ry, sy)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    out = np.zeros(sx.shape + (src.shape[2],), dtype=np.float64)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            yy = y0 + oy
            xx = x0 + ox
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(valid[..., None], vals, 0.0) * wy * wx
    return out
