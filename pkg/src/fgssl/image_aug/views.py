"""Multi-crop view generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .. import rng as rng_mod
from . import transforms as T
from .functional import as_image
from .policy import AugPolicy


@dataclass
class ViewSet:
    global_views: list[np.ndarray]
    local_views: list[np.ndarray]
    source_id: Hashable
    seed: tuple
    # one list of transform records per view, globals first
    provenance: list[list[dict]] = field(default_factory=list)

    def applied_transforms(self) -> set[str]:
        return {r["name"] for log in self.provenance for r in log if r["applied"]}

    def considered_transforms(self) -> set[str]:
        return {r["name"] for log in self.provenance for r in log}


def make_view(
    img: np.ndarray,
    policy: AugPolicy,
    rng: np.random.Generator,
    is_global: bool,
    log: list | None = None,
) -> np.ndarray:
    size = policy.global_size if is_global else policy.local_size
    scale = policy.global_scale if is_global else policy.local_scale
    out = T.random_resized_crop(img, rng, scale, size, policy.ratio, log=log)
    out = T.horizontal_flip(out, rng, policy.flip_p, log=log)
    if is_global or policy.local_transforms:
        for spec in policy.transforms:
            out = spec(out, rng, log=log)
    return out


def make_views(
    img: np.ndarray,
    policy: AugPolicy,
    seed: rng_mod.SeedLike,
    source_id: Hashable = None,
) -> ViewSet:
    """Produce ``policy.n_global`` global and ``policy.n_local`` local views.

    View ``j`` draws from the substream ``(seed, j)``, so views can be produced
    in any order (or in parallel) with identical results.
    """
    img = as_image(img)
    globals_, locals_, prov = [], [], []
    for j in range(policy.n_global + policy.n_local):
        log: list = []
        view = make_view(img, policy, rng_mod.stream(seed, j), j < policy.n_global, log)
        (globals_ if j < policy.n_global else locals_).append(view)
        prov.append(log)
    return ViewSet(globals_, locals_, source_id, rng_mod.key_tuple(seed), prov)
