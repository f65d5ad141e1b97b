"""A tiny Vision Transformer with mask-token substitution.

Layout: patch embedding -> optional mask-token substitution -> positional
embedding -> [CLS] + patch tokens -> pre-norm transformer blocks -> final
LayerNorm -> shared 2-layer projection head -> l2 normalisation.  The head is
applied to the CLS token and to every patch token.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .. import rng as rngs
from ..errors import ConfigError, InvalidInputError
from . import autodiff as ad


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 16
    embed_dim: int = 64
    depth: int = 4
    heads: int = 2
    mlp_ratio: float = 4.0
    projection_dim: int = 32
    head_hidden_dim: int = 128
    global_size: int = 224
    local_size: int = 96

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise InvalidInputError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        for size in (self.global_size, self.local_size):
            if size % self.patch_size:
                raise InvalidInputError(f"patch_size {self.patch_size} does not divide view size {size}")
        if min(self.patch_size, self.embed_dim, self.depth, self.heads, self.projection_dim, self.head_hidden_dim) < 1:
            raise InvalidInputError("encoder dimensions must be positive")

    @property
    def grid(self) -> int:
        return self.global_size // self.patch_size

    @property
    def mlp_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def n_tokens(self, size: int) -> int:
        if size % self.patch_size:
            raise InvalidInputError(f"view size {size} not divisible by patch size {self.patch_size}")
        return (size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
        return cls(**data)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    d, p = cfg.embed_dim, cfg.patch_size
    shapes = {
        "patch_embed.weight": (p * p * 3, d),
        "patch_embed.bias": (d,),
        "pos_embed": (cfg.grid * cfg.grid, d),
        "pos_cls": (d,),
        "cls_token": (d,),
        "mask_token": (d,),
    }
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes.update(
            {
                b + "norm1.weight": (d,),
                b + "norm1.bias": (d,),
                b + "attn.qkv.weight": (d, 3 * d),
                b + "attn.qkv.bias": (3 * d,),
                b + "attn.proj.weight": (d, d),
                b + "attn.proj.bias": (d,),
                b + "norm2.weight": (d,),
                b + "norm2.bias": (d,),
                b + "mlp.fc1.weight": (d, cfg.mlp_dim),
                b + "mlp.fc1.bias": (cfg.mlp_dim,),
                b + "mlp.fc2.weight": (cfg.mlp_dim, d),
                b + "mlp.fc2.bias": (d,),
            }
        )
    shapes.update(
        {
            "norm.weight": (d,),
            "norm.bias": (d,),
            "head.fc1.weight": (d, cfg.head_hidden_dim),
            "head.fc1.bias": (cfg.head_hidden_dim,),
            "head.fc2.weight": (cfg.head_hidden_dim, cfg.projection_dim),
            "head.fc2.bias": (cfg.projection_dim,),
        }
    )
    return shapes


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def check(self) -> None:
        expected = param_shapes(self.config)
        if set(expected) != set(self.tensors):
            raise InvalidInputError("parameter names do not match the encoder config")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise InvalidInputError(f"{name}: shape {self.tensors[name].shape} != {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise InvalidInputError(f"{name}: non-finite values")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


def init_params(cfg: EncoderConfig, seed: rngs.SeedLike = 0) -> EncoderParams:
    """Deterministic initialisation; each tensor draws from its own named substream."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        rng = rngs.stream(seed, "init", name)
        leaf = name.rsplit(".", 1)[-1]
        if name == "mask_token":
            value = np.zeros(shape)
        elif name.startswith("head.") and leaf == "weight":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        elif leaf == "bias":
            value = np.zeros(shape)
        elif "norm" in name and leaf == "weight":
            value = np.ones(shape)
        else:
            value = _trunc_normal(rng, shape, 0.02)
        tensors[name] = value.astype(np.float32)
    return EncoderParams(cfg, tensors)


# ---------------------------------------------------------------------------
# positional embeddings


def _cubic(x: float, a: float = -0.75) -> float:
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


@lru_cache(maxsize=None)
def cubic_resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D bicubic resampling matrix (half-pixel centres, clamped borders)."""
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        return np.eye(n_in)
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        x0 = int(np.floor(src))
        t = src - x0
        for k in range(-1, 3):
            idx = min(max(x0 + k, 0), n_in - 1)
            m[i, idx] += _cubic(k - t)
    return m


@lru_cache(maxsize=None)
def pos_interp_matrix(grid_in: int, grid_out: int) -> np.ndarray:
    """Maps row-major (grid_in**2, d) position tables to (grid_out**2, d)."""
    m = cubic_resize_matrix(grid_in, grid_out)
    return np.kron(m, m)


# ---------------------------------------------------------------------------
# forward graph


@dataclass
class TokenOutput:
    cls: np.ndarray  # (B, P) or (P,)
    patches: np.ndarray  # (B, N, P) or (N, P)

    @property
    def n_tokens(self) -> int:
        return self.patches.shape[-2]


def patchify(views: np.ndarray, patch: int) -> np.ndarray:
    b, h, w, c = views.shape
    gh, gw = h // patch, w // patch
    x = views.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch * patch * c)


def mask_array(mask, batch: int, n_tokens: int) -> np.ndarray | None:
    """Normalise a mask spec to a boolean (batch, n_tokens) array, or None.

    Accepts a boolean array, one index collection shared by all views, or a
    list with one index collection per view.
    """
    if mask is None:
        return None
    nested = isinstance(mask, (list, tuple)) and len(mask) > 0 and all(
        isinstance(m, (list, tuple, np.ndarray, set, frozenset)) for m in mask
    )
    if not nested:
        arr = np.asarray(sorted(mask) if isinstance(mask, (set, frozenset)) else mask)
        if arr.dtype == bool:
            arr = np.broadcast_to(arr, (batch, n_tokens)) if arr.ndim == 1 else arr
            if arr.shape != (batch, n_tokens):
                raise InvalidInputError(f"mask shape {arr.shape} != {(batch, n_tokens)}")
            return arr.copy()
    per_view = list(mask) if nested else [mask] * batch
    if len(per_view) != batch:
        raise InvalidInputError(f"{len(per_view)} masks for {batch} views")
    out = np.zeros((batch, n_tokens), dtype=bool)
    for b, idx in enumerate(per_view):
        idx = np.asarray(sorted(idx) if isinstance(idx, (set, frozenset)) else idx, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= n_tokens):
            raise InvalidInputError(f"mask index out of range [0, {n_tokens}) for view {b}")
        out[b, idx] = True
    return out


def _attention(x: ad.Tensor, p: dict, prefix: str, heads: int) -> ad.Tensor:
    b, t, d = x.shape
    dh = d // heads
    qkv = ad.add(ad.matmul(x, p[prefix + "qkv.weight"]), p[prefix + "qkv.bias"])
    qkv = ad.transpose(ad.reshape(qkv, (b, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    out = ad.matmul(ad.softmax(logits), v)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, t, d))
    return ad.add(ad.matmul(out, p[prefix + "proj.weight"]), p[prefix + "proj.bias"])


def _mlp(x: ad.Tensor, p: dict, prefix: str) -> ad.Tensor:
    h = ad.gelu(ad.add(ad.matmul(x, p[prefix + "fc1.weight"]), p[prefix + "fc1.bias"]))
    return ad.add(ad.matmul(h, p[prefix + "fc2.weight"]), p[prefix + "fc2.bias"])


def build_graph(p: dict, cfg: EncoderConfig, views: np.ndarray, mask: np.ndarray | None):
    b, h, w, _ = views.shape
    if h % cfg.patch_size or w % cfg.patch_size or h != w:
        raise InvalidInputError(f"view {h}x{w} must be square and divisible by patch {cfg.patch_size}")
    grid = h // cfg.patch_size
    dtype = p["pos_embed"].data.dtype
    x = ad.matmul(ad.const(patchify(views.astype(dtype, copy=False), cfg.patch_size)), p["patch_embed.weight"])
    x = ad.add(x, p["patch_embed.bias"])
    if mask is not None and mask.any():
        x = ad.replace_rows(x, mask, p["mask_token"])
    pos = p["pos_embed"]
    if grid != cfg.grid:
        pos = ad.matmul(ad.const(pos_interp_matrix(cfg.grid, grid).astype(dtype)), pos)
    x = ad.add(x, pos)
    cls = ad.reshape(ad.add(p["cls_token"], p["pos_cls"]), (1, 1, cfg.embed_dim))
    x = ad.concat([ad.broadcast_to(cls, (b, 1, cfg.embed_dim)), x], axis=1)
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        x = ad.add(x, _attention(ad.layer_norm(x, p[pre + "norm1.weight"], p[pre + "norm1.bias"]), p, pre + "attn.", cfg.heads))
        x = ad.add(x, _mlp(ad.layer_norm(x, p[pre + "norm2.weight"], p[pre + "norm2.bias"]), p, pre + "mlp."))
    x = ad.layer_norm(x, p["norm.weight"], p["norm.bias"])
    z = ad.l2_normalize(_mlp(x, p, "head."))
    return z[:, 0], z[:, 1:]


def _as_batch(views) -> tuple[np.ndarray, bool]:
    arr = np.asarray(views)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim != 4:
        raise InvalidInputError(f"expected (H, W, 3) or (B, H, W, 3) views, got {arr.shape}")
    return arr, False


class ForwardTrace:
    """A recorded forward pass; call :meth:`backward` with output gradients."""

    def __init__(self, params: EncoderParams, views, mask=None):
        batch, self.single = _as_batch(views)
        n = params.config.n_tokens(batch.shape[1])
        self.mask = mask_array(mask, batch.shape[0], n)
        self.leaves = {k: ad.param(v) for k, v in params.tensors.items()}
        self._cls, self._patches = build_graph(self.leaves, params.config, batch, self.mask)
        self.output = _output(self._cls.data, self._patches.data, self.single)

    def backward(self, grad_cls=None, grad_patches=None) -> dict[str, np.ndarray]:
        roots, grads = [], []
        for node, g in ((self._cls, grad_cls), (self._patches, grad_patches)):
            if g is not None:
                g = np.asarray(g)
                roots.append(node)
                grads.append(g[None] if self.single else g)
        for leaf in self.leaves.values():
            leaf.grad = None
        ad.backward(roots, grads)
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in self.leaves.items()}


def _output(cls, patches, single) -> TokenOutput:
    if single:
        return TokenOutput(cls[0].copy(), patches[0].copy())
    return TokenOutput(cls.copy(), patches.copy())


def forward(params: EncoderParams, views, mask=None) -> TokenOutput:
    """Encode one view ``(H, W, 3)`` or a batch ``(B, H, W, 3)`` of same-size views."""
    batch, single = _as_batch(views)
    m = mask_array(mask, batch.shape[0], params.config.n_tokens(batch.shape[1]))
    leaves = {k: ad.const(v) for k, v in params.tensors.items()}
    cls, patches = build_graph(leaves, params.config, batch, m)
    return _output(cls.data, patches.data, single)


def forward_trace(params: EncoderParams, views, mask=None) -> ForwardTrace:
    return ForwardTrace(params, views, mask)


def backward(params: EncoderParams, views, mask, grad_cls=None, grad_patches=None) -> dict[str, np.ndarray]:
    """Parameter gradients of ``<grad_cls, cls> + <grad_patches, patches>``."""
    return ForwardTrace(params, views, mask).backward(grad_cls, grad_patches)


def forward_many(params: EncoderParams, views: Iterable[np.ndarray], mask=None) -> TokenOutput:
    return forward(params, np.stack(list(views)), mask)
