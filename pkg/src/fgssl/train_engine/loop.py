"""Training loop with deterministic batching, JSONL metrics and resumable checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .. import rng as rngs
from ..encoder import EncoderParams, load_checkpoint, save_checkpoint
from ..encoder.checkpoint import prefixed, unprefixed
from ..errors import ConfigError, DataError, InvalidInputError
from .engine import TrainConfig, TrainState, contrastive_train_step, init_state, train_step
from .optim import AdamW

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
FINAL_CHECKPOINT = "checkpoint.ckpt"


class Dataset(Protocol):
    def __len__(self) -> int: ...

    def image(self, i: int) -> np.ndarray: ...

    def label(self, i: int) -> int: ...


@dataclass
class ArrayDataset:
    """In-memory images ``(M, H, W, 3)`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) == 0:
            raise InvalidInputError("dataset is empty")
        if len(self.labels) != len(self.images):
            raise InvalidInputError("one label per image required")
        if not self.ids:
            self.ids = [f"{i:06d}" for i in range(len(self.images))]

    def __len__(self) -> int:
        return len(self.images)

    def image(self, i: int) -> np.ndarray:
        return self.images[i]

    def label(self, i: int) -> int:
        return int(self.labels[i])


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Dataset indices for ``step``: a pure function of the arguments.

    Samples are consumed sequentially from a per-epoch permutation, so batches
    may straddle an epoch boundary.
    """
    if n < 1:
        raise InvalidInputError("dataset is empty")
    positions = step * batch_size + np.arange(batch_size)
    epochs, offsets = np.divmod(positions, n)
    out = np.empty(batch_size, dtype=np.int64)
    perms: dict[int, np.ndarray] = {}
    for k, (e, o) in enumerate(zip(epochs.tolist(), offsets.tolist())):
        if e not in perms:
            perms[e] = rngs.stream(seed, "epoch", e).permutation(n)
        out[k] = perms[e][o]
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_state(path, state: TrainState) -> None:
    cfg = state.config
    meta = {
        "kind": "train-state",
        "mode": state.mode,
        "step": state.step,
        "collapse_run": state.collapse_run,
        "optim_t": state.optim.t,
        "encoder": cfg.encoder.to_dict(),
        "train": cfg.to_dict(),
    }
    tensors = prefixed("student", state.student.tensors)
    if state.teacher is not None:
        tensors.update(prefixed("teacher", state.teacher.tensors))
    tensors.update(prefixed("optim", state.optim.state_tensors()))
    save_checkpoint(path, meta, tensors)


def load_state(path) -> TrainState:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "train-state":
        raise DataError(f"{path}: not a training checkpoint")
    cfg = TrainConfig.from_dict(meta["train"])
    student = EncoderParams(cfg.encoder, unprefixed("student", tensors))
    student.check()
    teacher = None
    if meta["mode"] == "simdino":
        teacher = EncoderParams(cfg.encoder, unprefixed("teacher", tensors))
        teacher.check()
    optim = AdamW({k: v.shape for k, v in student.tensors.items()})
    optim.load_state(unprefixed("optim", tensors), meta["optim_t"])
    return TrainState(cfg, student, teacher, optim, meta["step"], meta["collapse_run"], meta["mode"])


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[dict]
    checkpoint: Path
    metrics_path: Path


def _format_metrics(m: dict) -> str:
    return json.dumps(m, separators=(",", ":"))


def _restore_log(path: Path, start: int) -> list[str]:
    if not path.exists():
        return []
    kept = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["step"] < start:
            kept.append(line)
    return kept


def train_loop(
    config: TrainConfig,
    dataset: Dataset,
    out_dir,
    mode: str = "simdino",
    resume=None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``config.steps`` steps, writing ``metrics.jsonl`` and checkpoints under ``out_dir``.

    ``mode`` is ``"simdino"`` (teacher-student) or ``"contrastive"``.  With
    ``resume`` the run continues from that checkpoint, whose stored config must
    equal ``config``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    n = len(dataset)
    if n < 1:
        raise InvalidInputError("dataset is empty")
    if n < config.batch_size:
        log.info("dataset has %d images, fewer than batch size %d; batches repeat images", n, config.batch_size)

    if resume is not None:
        state = load_state(resume)
        if state.config != config or state.mode != mode:
            raise ConfigError(f"checkpoint {resume} was written with a different training config or mode")
    else:
        state = init_state(config, mode)

    metrics_path = out_dir / METRICS_FILE
    lines = _restore_log(metrics_path, state.step) if resume is not None else []
    history: list[dict] = []
    supervised = mode == "contrastive" and config.contrastive_loss == "supcon"
    try:
        with open(metrics_path, "w") as fh:
            for line in lines:
                fh.write(line + "\n")
            while state.step < config.steps:
                idx = batch_indices(n, config.batch_size, config.seed, state.step)
                images = [dataset.image(int(i)) for i in idx]
                if mode == "simdino":
                    m = train_step(state, images, idx)
                else:
                    labels = [dataset.label(int(i)) for i in idx] if supervised else None
                    m = contrastive_train_step(state, images, idx, labels)
                fh.write(_format_metrics(m) + "\n")
                fh.flush()
                history.append(m)
                if on_step is not None:
                    on_step(m)
                if config.checkpoint_every and state.step % config.checkpoint_every == 0 and state.step < config.steps:
                    save_state(out_dir / "checkpoints" / f"step_{state.step:06d}.ckpt", state)
    except OSError as exc:
        raise DataError(f"writing training outputs under {out_dir} failed: {exc}") from exc

    final = out_dir / FINAL_CHECKPOINT
    save_state(final, state)
    return TrainResult(state, history, final, metrics_path)


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
