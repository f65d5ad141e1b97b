"""AdamW, learning-rate / EMA schedules, gradient clipping, masking and EMA."""

from __future__ import annotations

import math

import numpy as np

from ..encoder import EncoderParams
from ..errors import InvalidInputError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def lr_at(step: int, total: int, peak: float, warmup_frac: float = 0.1, min_lr: float = 0.0) -> float:
    """Linear warmup over ``warmup_frac`` of the run, then cosine decay to ``min_lr``."""
    warmup = round_half_up(warmup_frac * total)
    if step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, total - warmup)
    progress = min(1.0, (step - warmup) / span)
    return min_lr + 0.5 * (peak - min_lr) * (1.0 + math.cos(math.pi * progress))


def ema_at(step: int, total: int, base: float, schedule: str = "constant") -> float:
    if schedule == "constant":
        return base
    if schedule == "cosine":
        progress = min(1.0, step / max(1, total))
        return 1.0 - (1.0 - base) * 0.5 * (1.0 + math.cos(math.pi * progress))
    raise InvalidInputError(f"unknown EMA schedule {schedule!r}")


def decays(name: str, value: np.ndarray) -> bool:
    """Weight decay applies to weight matrices only, not biases, norms or tokens."""
    return value.ndim == 2 and name.endswith(".weight")


class AdamW:
    """Decoupled weight decay Adam over a dict of float32 tensors."""

    def __init__(self, shapes: dict[str, tuple], betas=(0.9, 0.999), eps: float = 1e-8, dtype=np.float32):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s, dtype) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype) for k, s in shapes.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float, weight_decay: float) -> None:
        """Update ``params`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if weight_decay and decays(name, p):
                update = update + weight_decay * p
            p -= lr * update

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for k in self.m:
            self.m[k] = tensors[f"m/{k}"].copy()
            self.v[k] = tensors[f"v/{k}"].copy()
        self.t = t


def global_norm(grads: dict[str, np.ndarray]) -> float:
    # fixed (sorted) reduction order
    return math.sqrt(sum(float(np.sum(np.square(grads[k], dtype=np.float64))) for k in sorted(grads)))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm is None or max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / (norm + 1e-6)
    return {k: (g * g.dtype.type(factor)) for k, g in grads.items()}, norm


def sample_mask(n: int, ratio_range: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Distinct patch indices, ``round(r * n)`` of them with ``r ~ U(ratio_range)``."""
    if n < 1:
        raise InvalidInputError("token count must be >= 1")
    lo, hi = ratio_range
    if not 0.0 <= lo <= hi < 1.0:
        raise InvalidInputError(f"mask ratio range must satisfy 0 <= lo <= hi < 1, got {ratio_range}")
    r = rng.uniform(lo, hi)
    count = min(n, round_half_up(r * n))
    return np.sort(rng.choice(n, size=count, replace=False))


def ema_update(teacher: EncoderParams, student: EncoderParams, lam: float, out: EncoderParams | None = None) -> EncoderParams:
    """``teacher <- lam * teacher + (1 - lam) * student`` per tensor.

    Results are clipped to the interval spanned by the two inputs so rounding
    can never push a value outside it.  Writes into ``out`` when given.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"EMA coefficient must lie in [0, 1], got {lam}")
    if set(teacher.tensors) != set(student.tensors):
        raise InvalidInputError("teacher and student parameter names differ")
    result = {}
    for name, t in teacher.tensors.items():
        s = student.tensors[name]
        if t.shape != s.shape:
            raise InvalidInputError(f"{name}: teacher shape {t.shape} != student shape {s.shape}")
        mixed = t * t.dtype.type(lam) + s * t.dtype.type(1.0 - lam)
        mixed = np.clip(mixed, np.minimum(t, s), np.maximum(t, s))
        if out is not None:
            out.tensors[name][...] = mixed
        else:
            result[name] = mixed
    return out if out is not None else EncoderParams(teacher.config, result)
