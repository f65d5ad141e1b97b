"""SimpleShot nearest-prototype episodes and weighted kNN evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngs
from ..errors import InvalidInputError
from .table import EmbeddingTable

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int = 1
    m_query: int = 10
    n_episodes: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 1 or self.k_shot < 1 or self.m_query < 1 or self.n_episodes < 1:
            raise InvalidInputError("n_way, k_shot, m_query and n_episodes must all be >= 1")


@dataclass
class Episode:
    classes: np.ndarray  # table class ids, in episode-label order
    support: np.ndarray  # row indices into the table
    support_labels: np.ndarray  # episode-local labels 0..n_way-1
    query: np.ndarray
    query_labels: np.ndarray


@dataclass
class FewShotResult:
    mean: float
    std: float
    accuracies: list[float]
    spec: EpisodeSpec


def build_prototypes(vectors: np.ndarray, labels: np.ndarray, n_classes: int | None = None, renormalize: bool = False) -> np.ndarray:
    """Class means of the (unit) support rows; row ``c`` is class ``c``."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    protos = np.zeros((n_classes, vectors.shape[1]))
    for c in range(n_classes):
        rows = vectors[labels == c]
        if len(rows) == 0:
            raise InvalidInputError(f"class {c} has no support samples")
        protos[c] = rows.mean(axis=0)
    if renormalize:
        norms = np.linalg.norm(protos, axis=1, keepdims=True)
        protos = protos / np.where(norms > 0, norms, 1.0)
    return protos


def simpleshot_classify(queries: np.ndarray, prototypes: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Nearest prototype per query; ties go to the lowest class index.

    If any prototype is exactly zero, every query is classified by cosine
    similarity to the non-zero prototypes instead (a zero prototype never wins).
    """
    if metric not in METRICS:
        raise InvalidInputError(f"metric must be one of {METRICS}, got {metric!r}")
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    p = np.asarray(prototypes, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("prototypes contain non-finite values")
    pnorm = np.linalg.norm(p, axis=1)
    zero = pnorm == 0
    if metric == "cosine" or zero.any():
        if zero.all():
            pred = np.zeros(len(q), dtype=np.int64)
        else:
            qn = np.linalg.norm(q, axis=1, keepdims=True)
            sims = (q / np.where(qn > 0, qn, 1.0)) @ (p / np.where(zero, 1.0, pnorm)[:, None]).T
            sims[:, zero] = -np.inf
            pred = np.argmax(sims, axis=1)
    else:
        dists = np.linalg.norm(q[:, None, :] - p[None, :, :], axis=2)
        pred = np.argmin(dists, axis=1)
    return int(pred[0]) if single else pred


def check_class_sizes(table: EmbeddingTable, spec: EpisodeSpec) -> np.ndarray:
    classes, counts = np.unique(table.labels, return_counts=True)
    if spec.n_way > len(classes):
        raise InvalidInputError(f"episodes need {spec.n_way} classes but the table has {len(classes)}")
    need = spec.k_shot + spec.m_query
    for c, n in zip(classes, counts):
        if n < need:
            raise InvalidInputError(
                f"class {int(c)} has {int(n)} samples; {spec.k_shot}-shot episodes with {spec.m_query} queries need {need}"
            )
    return classes


def sample_episode(table: EmbeddingTable, spec: EpisodeSpec, index: int) -> Episode:
    """Deterministic given ``(spec.seed, index)``; support and query are disjoint."""
    classes = check_class_sizes(table, spec)
    rng = rngs.stream(spec.seed, "episode", index)
    chosen = classes[np.sort(rng.choice(len(classes), size=spec.n_way, replace=False))]
    support, s_lab, query, q_lab = [], [], [], []
    for local, c in enumerate(chosen):
        members = np.flatnonzero(table.labels == c)
        picked = members[rng.permutation(len(members))[: spec.k_shot + spec.m_query]]
        support += picked[: spec.k_shot].tolist()
        query += picked[spec.k_shot :].tolist()
        s_lab += [local] * spec.k_shot
        q_lab += [local] * spec.m_query
    return Episode(chosen, np.array(support), np.array(s_lab), np.array(query), np.array(q_lab))


def episode_accuracy(table: EmbeddingTable, ep: Episode, metric: str = "euclidean", renormalize: bool = False) -> float:
    unit = table.unit_rows()
    protos = build_prototypes(unit[ep.support], ep.support_labels, len(ep.classes), renormalize)
    pred = simpleshot_classify(unit[ep.query], protos, metric)
    return float(np.mean(pred == ep.query_labels))


def run_fewshot(table: EmbeddingTable, spec: EpisodeSpec, metric: str = "euclidean", renormalize: bool = False) -> FewShotResult:
    """Mean and population std of per-episode SimpleShot accuracy."""
    check_class_sizes(table, spec)
    accs = [episode_accuracy(table, sample_episode(table, spec, i), metric, renormalize) for i in range(spec.n_episodes)]
    mean = sum(accs) / len(accs)
    std = float(np.std(np.asarray(accs)))
    return FewShotResult(mean, std, accs, spec)


@dataclass
class KnnResult:
    accuracy: float
    predictions: np.ndarray
    k: int
    tau: float


def knn_predict(train: EmbeddingTable, queries: np.ndarray, k: int = 20, tau: float = 0.07) -> np.ndarray:
    """Cosine top-k neighbours voting with weight ``exp(sim / tau)``.

    Equal similarities rank the lower train index first; tied votes go to the
    lower class id.
    """
    if k < 1 or k > len(train):
        raise InvalidInputError(f"k={k} must lie in [1, {len(train)}] (train table size)")
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    tr = train.unit_rows()
    q = np.asarray(queries, dtype=np.float64)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    q = q / np.where(qn > 0, qn, 1.0)
    sims = q @ tr.T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    n_classes = int(train.labels.max()) + 1
    votes = np.zeros((len(q), n_classes))
    top_sims = np.take_along_axis(sims, order, axis=1)
    weights = np.exp(top_sims / tau)
    np.add.at(votes, (np.arange(len(q))[:, None], train.labels[order]), weights)
    return np.argmax(votes, axis=1)


def knn_eval(train: EmbeddingTable, val: EmbeddingTable, k: int = 20, tau: float = 0.07) -> KnnResult:
    missing = set(val.classes.tolist()) - set(train.classes.tolist())
    if missing:
        raise InvalidInputError(f"validation classes {sorted(missing)} do not occur in the train table")
    if train.dim != val.dim:
        raise InvalidInputError(f"embedding dims differ: train {train.dim}, val {val.dim}")
    pred = knn_predict(train, val.vectors, k, tau)
    return KnnResult(float(np.mean(pred == val.labels)), pred, k, tau)
