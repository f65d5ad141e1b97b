"""Teacher-student and single-encoder contrastive training steps."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import rng as rngs
from ..encoder import EncoderConfig, EncoderParams, forward, forward_trace, init_params
from ..errors import ConfigError, InvalidInputError, TrainingDiverged
from ..image_aug import AugPolicy, make_views, preset
from ..losses import (
    FeatureBatch,
    LossWeights,
    cls_align_loss,
    coding_rate_loss,
    patch_align_loss,
    simclr_loss,
    supcon_loss,
    total_loss,
)
from .optim import AdamW, clip_grads, ema_at, ema_update, lr_at, sample_mask

log = logging.getLogger(__name__)

MODES = ("simdino", "contrastive")


def _default_policy() -> AugPolicy:
    return preset("dino")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 32
    peak_lr: float = 1e-3
    min_lr: float = 1e-6
    warmup_frac: float = 0.1
    weight_decay: float = 0.04
    ema: float = 0.996
    ema_schedule: str = "constant"
    mask_ratio: tuple[float, float] = (0.1, 0.5)
    grad_clip: float | None = 3.0
    loss: LossWeights = field(default_factory=LossWeights)
    exclude_same_view: bool = False
    reg_on_locals: bool = False
    contrastive_loss: str = "simclr"
    collapse_threshold: float = 0.99
    collapse_patience: int = 50
    checkpoint_every: int = 0
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aug: AugPolicy = field(default_factory=_default_policy)

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2")
        lo, hi = self.mask_ratio
        if not 0.0 <= lo <= hi < 1.0:
            raise InvalidInputError(f"mask_ratio must satisfy 0 <= lo <= hi < 1, got {self.mask_ratio}")
        if not 0.0 <= self.ema <= 1.0:
            raise InvalidInputError("ema must lie in [0, 1]")
        if self.ema_schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown ema_schedule {self.ema_schedule!r}")
        if self.contrastive_loss not in ("simclr", "supcon"):
            raise InvalidInputError(f"contrastive_loss must be 'simclr' or 'supcon', got {self.contrastive_loss!r}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise InvalidInputError("warmup_frac must lie in [0, 1]")
        if self.peak_lr < 0 or self.min_lr < 0 or self.weight_decay < 0:
            raise InvalidInputError("learning rates and weight decay must be non-negative")
        for size in (self.aug.global_size, self.aug.local_size):
            self.encoder.n_tokens(size)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "loss":
                value = dataclasses.asdict(value)
            elif f.name in ("encoder", "aug"):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        if "loss" in data:
            loss = dict(data["loss"])
            bad = set(loss) - {f.name for f in dataclasses.fields(LossWeights)}
            if bad:
                raise ConfigError(f"unknown loss keys: {sorted(bad)}")
            data["loss"] = LossWeights(**loss)
        if "encoder" in data:
            data["encoder"] = EncoderConfig.from_dict(data["encoder"])
        if "aug" in data:
            data["aug"] = AugPolicy.from_dict(data["aug"])
        if "mask_ratio" in data:
            data["mask_ratio"] = tuple(data["mask_ratio"])
        return cls(**data)


@dataclass
class TrainState:
    config: TrainConfig
    student: EncoderParams
    teacher: EncoderParams | None
    optim: AdamW
    step: int = 0
    collapse_run: int = 0
    mode: str = "simdino"


def init_state(config: TrainConfig, mode: str = "simdino") -> TrainState:
    if mode not in MODES:
        raise InvalidInputError(f"unknown training mode {mode!r}")
    student = init_params(config.encoder, config.seed)
    teacher = student.copy() if mode == "simdino" else None
    optim = AdamW({k: v.shape for k, v in student.tensors.items()})
    return TrainState(config, student, teacher, optim, mode=mode)


# ---------------------------------------------------------------------------
# views, masks, metrics


def view_seed(seed: int, step: int, image_id: int) -> tuple:
    return (seed, "views", step, int(image_id))


def batch_views(policy: AugPolicy, images: Sequence[np.ndarray], ids: Sequence[int], seed: int, step: int):
    """Stacked global ``(B*ng, H, W, 3)`` and local ``(B*nl, h, w, 3)`` views, image-major."""
    sets = [make_views(img, policy, view_seed(seed, step, i), source_id=int(i)) for img, i in zip(images, ids)]
    globals_ = np.stack([v for s in sets for v in s.global_views])
    locals_ = np.stack([v for s in sets for v in s.local_views]) if policy.n_local else None
    return globals_, locals_


def batch_masks(n_tokens: int, ratio: tuple[float, float], ids: Sequence[int], n_global: int, seed: int, step: int):
    return [
        sample_mask(n_tokens, ratio, rngs.stream(seed, "mask", step, int(i), g))
        for i in ids
        for g in range(n_global)
    ]


def mean_pairwise_cosine(z: np.ndarray, image_ids: np.ndarray) -> float:
    """Mean cosine similarity over pairs of rows that come from different images."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    z = z / np.maximum(norms, 1e-12)
    sims = z @ z.T
    other = image_ids[:, None] != image_ids[None, :]
    if not other.any():
        return float("nan")
    return float(sims[other].mean())


def effective_rank(z: np.ndarray) -> float:
    """exp of the entropy of the normalised singular-value spectrum."""
    s = np.linalg.svd(np.asarray(z, dtype=np.float64), compute_uv=False)
    total = s.sum()
    if total <= 0:
        return 0.0
    p = s[s > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def _check_finite(state: TrainState, values: dict, grads: dict, lr: float) -> None:
    bad = [k for k, v in values.items() if not np.isfinite(v)]
    bad += [f"grad:{k}" for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        snapshot = {"step": state.step, "lr": lr, **{k: float(v) for k, v in values.items()}, "non_finite": bad}
        raise TrainingDiverged(f"non-finite values at step {state.step}: {', '.join(bad)}", snapshot)


def _check_features(state: TrainState, feats: dict, lr: float) -> None:
    bad = [k for k, v in feats.items() if not np.all(np.isfinite(v))]
    if bad:
        snapshot = {"step": state.step, "lr": lr, "non_finite": bad}
        raise TrainingDiverged(f"non-finite encoder outputs at step {state.step}: {', '.join(bad)}", snapshot)


def _sum_grads(parts: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    out = {k: v.copy() for k, v in parts[0].items()}
    for part in parts[1:]:
        for k, v in part.items():
            out[k] += v
    return out


def _update_collapse(state: TrainState, cos: float) -> int:
    cfg = state.config
    state.collapse_run = state.collapse_run + 1 if cos > cfg.collapse_threshold else 0
    alert = int(state.collapse_run >= cfg.collapse_patience)
    if state.collapse_run == cfg.collapse_patience:
        log.warning(
            "possible collapse: mean pairwise CLS cosine above %.2f for %d consecutive steps (step %d)",
            cfg.collapse_threshold, cfg.collapse_patience, state.step,
        )
    return alert


def _optimize(state: TrainState, grads: dict[str, np.ndarray], lr: float) -> float:
    cfg = state.config
    grads, norm = clip_grads(grads, cfg.grad_clip)
    state.optim.step(state.student.tensors, grads, lr, cfg.weight_decay)
    return norm


# ---------------------------------------------------------------------------
# steps


def train_step(state: TrainState, images: Sequence[np.ndarray], ids: Sequence[int]) -> dict:
    """One teacher-student step; mutates ``state`` and returns the step metrics."""
    if state.teacher is None:
        raise InvalidInputError("train_step needs a teacher; use contrastive_train_step for single-encoder runs")
    cfg = state.config
    policy, lam = cfg.aug, cfg.loss
    b, ng, nl = len(images), policy.n_global, policy.n_local
    if b < 2:
        raise InvalidInputError("a training batch needs >= 2 images")
    step = state.step
    lr = lr_at(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac, cfg.min_lr)
    ema = ema_at(step, cfg.steps, cfg.ema, cfg.ema_schedule)

    g_views, l_views = batch_views(policy, images, ids, cfg.seed, step)
    teacher_out = forward(state.teacher, g_views)
    n_tok = teacher_out.patches.shape[1]
    masks = batch_masks(n_tok, cfg.mask_ratio, ids, ng, cfg.seed, step)

    s_glob = forward_trace(state.student, g_views)
    s_loc = forward_trace(state.student, l_views) if nl else None
    any_mask = any(len(m) for m in masks)
    s_mask = forward_trace(state.student, g_views, mask=masks) if any_mask else None

    feats = {"teacher": teacher_out.cls, "student_global": s_glob.output.cls}
    if nl:
        feats["student_local"] = s_loc.output.cls
    _check_features(state, feats, lr)

    p = s_glob.output.cls.shape[-1]
    s_cls = s_glob.output.cls.reshape(b, ng, p)
    if nl:
        s_cls = np.concatenate([s_cls, s_loc.output.cls.reshape(b, nl, p)], axis=1)
    t_cls = teacher_out.cls.reshape(b, ng, p)

    cls = cls_align_loss(s_cls, t_cls, cfg.exclude_same_view)
    if any_mask:
        patch = patch_align_loss(s_mask.output.patches, teacher_out.patches, masks)
    else:
        patch = (0.0, np.zeros(teacher_out.patches.shape))
    reg_rows = s_glob.output.cls
    if cfg.reg_on_locals and nl:
        reg_rows = np.concatenate([reg_rows, s_loc.output.cls])
    reg = coding_rate_loss(reg_rows, lam.eps)
    total, g = total_loss({"cls": cls, "patch": patch, "reg": reg}, lam)
    values = {"loss": total, "cls": cls[0], "patch": patch[0], "reg": reg[0]}
    _check_finite(state, values, g, lr)

    dt = state.student.dtype
    g_cls = g["cls"]
    grad_glob = g_cls[:, :ng].reshape(b * ng, p) + g["reg"][: b * ng]
    parts = [s_glob.backward(grad_glob.astype(dt), None)]
    if nl and (lam.cls > 0 or cfg.reg_on_locals):
        grad_loc = g_cls[:, ng:].reshape(b * nl, p)
        if cfg.reg_on_locals:
            grad_loc = grad_loc + g["reg"][b * ng :]
        parts.append(s_loc.backward(grad_loc.astype(dt), None))
    if any_mask and lam.patch > 0:
        parts.append(s_mask.backward(None, g["patch"].astype(dt)))
    grads = _sum_grads(parts)
    _check_finite(state, {}, grads, lr)

    image_of_row = np.repeat(np.arange(b), ng)
    cos = mean_pairwise_cosine(s_glob.output.cls, image_of_row)
    erank = effective_rank(s_glob.output.cls)

    grad_norm = _optimize(state, grads, lr)
    ema_update(state.teacher, state.student, ema, out=state.teacher)
    alert = _update_collapse(state, cos)
    metrics = {
        "step": step,
        "loss": float(total),
        "cls": float(cls[0]),
        "patch": float(patch[0]),
        "reg": float(reg[0]),
        "cos": cos,
        "eff_rank": erank,
        "lr": lr,
        "ema": ema,
        "grad_norm": grad_norm,
        "collapse_alert": alert,
    }
    state.step += 1
    return metrics


def contrastive_train_step(
    state: TrainState, images: Sequence[np.ndarray], ids: Sequence[int], labels: Sequence[int] | None = None
) -> dict:
    """One single-encoder step on the global views: SimCLR, or SupCon when labels are given."""
    cfg = state.config
    policy = cfg.aug.replace(n_local=0)
    b, ng = len(images), policy.n_global
    if b < 2:
        raise InvalidInputError("a training batch needs >= 2 images")
    step = state.step
    lr = lr_at(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac, cfg.min_lr)

    views, _ = batch_views(policy, images, ids, cfg.seed, step)
    trace = forward_trace(state.student, views)
    z = trace.output.cls
    _check_features(state, {"student_global": z}, lr)
    image_of_row = np.repeat(np.arange(b), ng)
    row_labels = None if labels is None else np.repeat(np.asarray(labels), ng)
    batch = FeatureBatch(z, image_of_row, row_labels)
    value, grad = supcon_loss(batch, cfg.loss.tau) if labels is not None else simclr_loss(batch, cfg.loss.tau)
    _check_finite(state, {"loss": value}, {"z": grad}, lr)
    grads = trace.backward(grad.astype(state.student.dtype), None)
    _check_finite(state, {}, grads, lr)

    cos = mean_pairwise_cosine(z, image_of_row)
    erank = effective_rank(z)
    grad_norm = _optimize(state, grads, lr)
    alert = _update_collapse(state, cos)
    metrics = {
        "step": step,
        "loss": float(value),
        "cos": cos,
        "eff_rank": erank,
        "lr": lr,
        "grad_norm": grad_norm,
        "collapse_alert": alert,
    }
    state.step += 1
    return metrics
