"""Training objectives, each returning ``(value, gradient)``.

Gradients are with respect to the (student) feature inputs; teacher features
are treated as constants.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidInputError


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    patch: float = 1.0
    reg: float = 1.0
    tau: float = 0.1
    eps: float = 0.5

    def __post_init__(self):
        if min(self.cls, self.patch, self.reg) < 0:
            raise InvalidInputError("loss weights must be non-negative")
        if self.tau <= 0 or self.eps <= 0:
            raise InvalidInputError("tau and eps must be positive")


@dataclass
class FeatureBatch:
    """Flat rows of view features with the image each row came from.

    ``labels`` are per-row class ids (every view of an image shares its label).
    """

    rows: np.ndarray
    image_ids: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.image_ids = np.asarray(self.image_ids)
        if self.rows.ndim != 2 or len(self.image_ids) != len(self.rows):
            raise InvalidInputError("rows must be (M, d) with one image id per row")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.rows):
                raise InvalidInputError("labels must have one entry per row")
        if not np.all(np.isfinite(self.rows)):
            raise InvalidInputError("features contain non-finite values")

    @classmethod
    def from_views(cls, z: np.ndarray, labels=None) -> "FeatureBatch":
        """Build from a ``(B, V, d)`` array; ``labels`` is per image."""
        z = np.asarray(z)
        b, v, d = z.shape
        image_ids = np.repeat(np.arange(b), v)
        row_labels = None if labels is None else np.repeat(np.asarray(labels), v)
        return cls(z.reshape(b * v, d), image_ids, row_labels)

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.rows, axis=1) - 1) <= tol))


def simclr_positives(image_ids: np.ndarray) -> np.ndarray:
    """Index of each row's designated positive: the next view of the same image, cyclically."""
    image_ids = np.asarray(image_ids)
    pos = np.empty(len(image_ids), dtype=np.int64)
    for img in np.unique(image_ids):
        rows = np.flatnonzero(image_ids == img)
        if len(rows) < 2:
            raise InvalidInputError(f"image {img!r} contributes a single view; contrastive losses need >= 2")
        pos[rows] = np.roll(rows, -1)
    return pos


def _contrastive(z: np.ndarray, pos_weight: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    # pos_weight: (M, M), zero diagonal, rows sum to 1
    m = len(z)
    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - top)
    denom = ex.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(denom[:, 0])
    probs = ex / denom
    pos_logit = np.where(pos_weight > 0, logits, 0.0)
    per_anchor = lse - (pos_weight * pos_logit).sum(axis=1)
    value = float(per_anchor.mean())
    g = (probs - pos_weight) / (tau * m)
    grad = (g + g.T) @ z
    return value, grad


def simclr_loss(batch: FeatureBatch, tau: float = 0.1) -> tuple[float, np.ndarray]:
    """NT-Xent: each view against its paired view, all other views as the denominator."""
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    pos = simclr_positives(batch.image_ids)
    m = len(batch.rows)
    weight = np.zeros((m, m))
    weight[np.arange(m), pos] = 1.0
    return _contrastive(batch.rows, weight, tau)


def supcon_loss(batch: FeatureBatch, tau: float = 0.1) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss: every other same-label view is a positive."""
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    if batch.labels is None:
        raise InvalidInputError("supcon_loss needs labels")
    same = batch.labels[:, None] == batch.labels[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise InvalidInputError(f"anchor row {bad} has no positive (label {batch.labels[bad]!r})")
    return _contrastive(batch.rows, same / counts[:, None], tau)


def cls_align_loss(
    student: np.ndarray, teacher: np.ndarray, exclude_same_view: bool = False
) -> tuple[float, np.ndarray]:
    """Mean cosine distance between every student view and every teacher global view.

    ``student`` is ``(B, Vs, d)`` over global+local views (globals first),
    ``teacher`` is ``(B, Vt, d)`` over global views.  With ``exclude_same_view``
    the pairs where student view ``j`` is teacher view ``j`` are dropped.
    """
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    if s.ndim != 3 or t.ndim != 3 or s.shape[0] != t.shape[0] or s.shape[2] != t.shape[2]:
        raise InvalidInputError(f"student {s.shape} and teacher {t.shape} cover different images")
    b, vs, _ = s.shape
    vt = t.shape[1]
    pairs = np.ones((vs, vt))
    if exclude_same_view:
        if vs < vt:
            raise InvalidInputError("student must include the teacher's global views first")
        pairs[np.arange(vt), np.arange(vt)] = 0.0
    if pairs.sum() == 0:
        raise InvalidInputError("no student/teacher view pairs")
    pairs /= pairs.sum()
    sims = np.einsum("bsd,btd->bst", s, t)
    value = float(np.mean(np.sum(pairs * (1.0 - sims), axis=(1, 2))))
    grad = -np.einsum("st,btd->bsd", pairs, t) / b
    return value, grad


def _mask_bool(mask, b: int, n: int) -> np.ndarray:
    arr = np.asarray(mask) if not isinstance(mask, (list, tuple)) else None
    if arr is not None and arr.dtype == bool:
        if arr.shape != (b, n):
            raise InvalidInputError(f"mask shape {arr.shape} != {(b, n)}")
        return arr
    if len(mask) != b:
        raise InvalidInputError(f"{len(mask)} masks for {b} images")
    out = np.zeros((b, n), dtype=bool)
    for i, idx in enumerate(mask):
        idx = np.asarray(sorted(idx) if isinstance(idx, (set, frozenset)) else idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidInputError(f"mask index out of range for image {i}")
        out[i, idx] = True
    return out


def patch_align_loss(student: np.ndarray, teacher: np.ndarray, mask) -> tuple[float, np.ndarray]:
    """Mean cosine distance at masked patch positions.

    ``student``/``teacher`` are ``(B, N, d)``; ``mask`` is a ``(B, N)`` bool array
    or one index collection per image.  Images with an empty mask do not
    contribute and the mean runs over the contributing ones.
    """
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 3:
        raise InvalidInputError(f"student {s.shape} and teacher {t.shape} patch tokens differ")
    b, n, _ = s.shape
    m = _mask_bool(mask, b, n)
    sizes = m.sum(axis=1)
    contributing = sizes > 0
    if not contributing.any():
        raise InvalidInputError("every mask is empty")
    w = np.where(m, 1.0 / np.maximum(sizes, 1)[:, None], 0.0) / contributing.sum()
    sims = np.einsum("bnd,bnd->bn", s, t)
    value = float(np.sum(w * (1.0 - sims)))
    grad = -w[..., None] * t
    return value, grad


def coding_rate_loss(z: np.ndarray, eps: float = 0.5) -> tuple[float, np.ndarray]:
    """``-1/2 logdet(I + d/(B eps) Z^T Z)`` via Cholesky, on the smaller Gram side."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty (B, d) matrix, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("coding-rate input contains non-finite values")
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    b, d = z.shape
    alpha = d / (b * eps)
    if b < d:
        gram = np.eye(b) + alpha * (z @ z.T)
        factor = cho_factor(gram, lower=True)
        grad = -alpha * cho_solve(factor, z)
    else:
        gram = np.eye(d) + alpha * (z.T @ z)
        factor = cho_factor(gram, lower=True)
        grad = -alpha * cho_solve(factor, z.T).T
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(-0.5 * logdet), grad


def total_loss(
    components: Mapping[str, tuple[float, np.ndarray]], weights: LossWeights
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted sum of the ``cls``, ``patch`` and ``reg`` components.

    Returns the total and each component gradient scaled by its weight.
    """
    lam = {"cls": weights.cls, "patch": weights.patch, "reg": weights.reg}
    unknown = set(components) - set(lam)
    if unknown:
        raise InvalidInputError(f"unknown loss components {sorted(unknown)}")
    value = 0.0
    grads = {}
    for name, (v, g) in components.items():
        value += lam[name] * v
        grads[name] = lam[name] * np.asarray(g)
    return value, grads
