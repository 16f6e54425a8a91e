"""Desk-scale prototype fitting from presence/absence labels.

Each image contributes ``k`` component features. Components from images
without fouling form the background pool. Components from fouled images are
split: the ones most similar to background prototypes stay in the background
pool (every image is assumed to hold some clean content), the rest form the
fouling pool. Both pools are clustered into ``M`` prototypes each, the split
is refined for a few rounds, and the whole procedure is repeated over several
seeds, keeping the seed with the best validation average precision.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .core import (ComponentAssignment, EmbeddedFrame, InferenceConfig, PrototypeBank,
                   cluster_components, predict_frame, score_components)
from .errors import EmptyDataset, InsufficientComponents, LabelInconsistent, MissingClassData
from .kmeans import spherical_kmeans
from .metrics import average_precision
from .validation import check_count, check_positive

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class FrameLabel:
    presence: bool
    slof: int | None = None
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.slof is not None:
            if self.slof not in (0, 1, 2):
                raise ValueError(f"slof must be 0, 1 or 2, got {self.slof!r}")
            if (self.slof > 0) != bool(self.presence):
                raise LabelInconsistent(
                    f"slof {self.slof} contradicts presence {int(bool(self.presence))}")


@dataclass(frozen=True, eq=False)
class LabeledEmbeddingSet:
    frames: tuple[EmbeddedFrame, ...]
    labels: tuple[FrameLabel, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.frames) != len(self.labels):
            raise ValueError(f"{len(self.frames)} frames but {len(self.labels)} labels")

    @classmethod
    def from_arrays(cls, frames: Sequence[EmbeddedFrame], presence, slof=None, split=None):
        n = len(frames)
        slof = [None] * n if slof is None else list(slof)
        split = ["train"] * n if split is None else list(split)
        labels = [FrameLabel(bool(p), s, sp) for p, s, sp in zip(presence, slof, split)]
        return cls(tuple(frames), tuple(labels))

    def __len__(self):
        return len(self.frames)

    @property
    def presence(self) -> np.ndarray:
        return np.array([lab.presence for lab in self.labels], dtype=bool)

    def take(self, indices) -> "LabeledEmbeddingSet":
        return LabeledEmbeddingSet(tuple(self.frames[i] for i in indices),
                                   tuple(self.labels[i] for i in indices))

    def split(self, name: str) -> "LabeledEmbeddingSet":
        return self.take([i for i, lab in enumerate(self.labels) if lab.split == name])

    def train_validation(self) -> tuple["LabeledEmbeddingSet", "LabeledEmbeddingSet"]:
        """Train and validation subsets.

        Without tagged validation frames, every fifth train frame (in frame
        order) is held out for validation.
        """
        train_idx = [i for i, lab in enumerate(self.labels) if lab.split == "train"]
        val_idx = [i for i, lab in enumerate(self.labels) if lab.split == "validation"]
        if not val_idx:
            val_idx = train_idx[4::5]
            held = set(val_idx)
            train_idx = [i for i in train_idx if i not in held]
        return self.take(train_idx), self.take(val_idx)


@dataclass(frozen=True)
class FitConfig:
    prototypes_per_class: int = 10
    components_per_image: int = 5
    seeds: tuple[int, ...] = tuple(range(10))
    refine_rounds: int = 3
    retain_min: int = 1
    temperature: float = 0.1
    max_iter: int = 100
    positive_class: str = "fouling"
    negative_class: str = "no_fouling"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        check_count(self.prototypes_per_class, "prototypes_per_class")
        check_count(self.components_per_image, "components_per_image")
        check_count(self.refine_rounds, "refine_rounds", minimum=0)
        check_count(self.retain_min, "retain_min")
        check_count(self.max_iter, "max_iter")
        check_positive(self.temperature, "temperature")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.retain_min >= self.components_per_image:
            raise ValueError("retain_min must be smaller than components_per_image")
        if self.positive_class == self.negative_class:
            raise ValueError("positive and negative class names must differ")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class FitReport:
    seed_ap: dict[int, float]
    chosen_seed: int
    pool_sizes: dict[str, int]
    rounds: int
    round_train_ap: dict[int, tuple[float, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed_ap": {str(k): v for k, v in self.seed_ap.items()},
            "chosen_seed": self.chosen_seed,
            "pool_sizes": dict(self.pool_sizes),
            "rounds": self.rounds,
            "round_train_ap": {str(k): list(v) for k, v in self.round_train_ap.items()},
        }


@dataclass(frozen=True, eq=False)
class ComponentPool:
    """Component centroids gathered from many frames, in frame-major order."""

    vectors: np.ndarray
    frame_index: np.ndarray
    component: np.ndarray
    label: np.ndarray
    frame_ids: tuple[str, ...]
    assignments: tuple[ComponentAssignment, ...] = ()

    def __len__(self):
        return self.vectors.shape[0]

    def take(self, idx) -> "ComponentPool":
        idx = np.asarray(idx, dtype=np.intp)
        return ComponentPool(self.vectors[idx], self.frame_index[idx], self.component[idx],
                             self.label[idx], self.frame_ids, self.assignments)

    def where(self, mask) -> "ComponentPool":
        return self.take(np.flatnonzero(mask))


def collect_components(data: LabeledEmbeddingSet | Sequence[EmbeddedFrame], k: int = 5,
                       max_iter: int = 100) -> ComponentPool:
    """Cluster every frame into ``k`` components and pool the centroids."""
    if isinstance(data, LabeledEmbeddingSet):
        frames, labels = data.frames, data.presence
    else:
        frames = tuple(data)
        labels = np.zeros(len(frames), dtype=bool)
    if not frames:
        raise EmptyDataset("no frames to collect components from")
    assignments = [cluster_components(f, k, max_iter) for f in frames]
    vectors = np.concatenate([a.centroids for a in assignments], axis=0)
    frame_index = np.repeat(np.arange(len(frames)), k)
    component = np.tile(np.arange(k), len(frames))
    return ComponentPool(vectors=vectors, frame_index=frame_index, component=component,
                         label=np.repeat(np.asarray(labels, dtype=bool), k),
                         frame_ids=tuple(f.frame_id for f in frames),
                         assignments=tuple(assignments))


def partition_positive_components(pool_pos: ComponentPool, negative_prototypes,
                                  retain_min: int = 1) -> tuple[ComponentPool, ComponentPool]:
    """Split fouled-image components into (fouling pool, retained background pool).

    Within each image, components are ranked by their highest cosine to any
    background prototype (ties by component index); the top ``retain_min``
    are retained as background and the rest are released to the fouling pool.
    """
    check_count(retain_min, "retain_min")
    negP = np.asarray(negative_prototypes, dtype=np.float64)
    affinity = (pool_pos.vectors @ negP.T).max(axis=1) if len(pool_pos) else np.empty(0)
    released, retained = [], []
    for fi in np.unique(pool_pos.frame_index):
        members = np.flatnonzero(pool_pos.frame_index == fi)
        if members.size <= retain_min:
            raise InsufficientComponents(
                f"frame {pool_pos.frame_ids[fi]!r} has {members.size} components, "
                f"needs more than retain_min={retain_min}")
        ranked = members[np.argsort(-affinity[members], kind="stable")]
        retained.extend(ranked[:retain_min])
        released.extend(ranked[retain_min:])
    return pool_pos.take(sorted(released)), pool_pos.take(sorted(retained))


def _explained_by_background(pool: ComponentPool, labels: np.ndarray, centroids: np.ndarray,
                             negP: np.ndarray) -> np.ndarray:
    """Mask of pool members whose fouling cluster sits on a background prototype.

    A cluster counts as background when its centroid is at least as close to
    some background prototype as its own members are to it on average.
    """
    member_cos = np.einsum("ij,ij->i", pool.vectors, centroids[labels])
    reject = np.zeros(len(pool), dtype=bool)
    neg_affinity = (centroids @ negP.T).max(axis=1)
    for j in range(centroids.shape[0]):
        members = labels == j
        if members.any() and neg_affinity[j] >= member_cos[members].mean():
            reject |= members
    return reject


def _fouling_confidence(assignments: Sequence[ComponentAssignment], bank: PrototypeBank,
                        target: int) -> np.ndarray:
    return np.array([score_components(a, bank)[:, target].max() for a in assignments])


def _make_bank(negP, fouP, cfg: FitConfig, metadata=None) -> PrototypeBank:
    return PrototypeBank(classes=((cfg.negative_class, True), (cfg.positive_class, False)),
                         prototypes=(negP, fouP), temperature=cfg.temperature,
                         metadata=metadata or {})


def _fit_one_seed(neg_pool: ComponentPool, pos_pool: ComponentPool, train_assign, train_y,
                  cfg: FitConfig, seed: int):
    M = cfg.prototypes_per_class

    def cluster(vectors, what):
        if vectors.shape[0] < M:
            raise MissingClassData(
                f"{what} pool has {vectors.shape[0]} components, fewer than {M} prototypes")
        return spherical_kmeans(vectors, M, seed)

    def train_ap(negP, fouP):
        bank = _make_bank(negP, fouP, cfg)
        return average_precision(_fouling_confidence(train_assign, bank, 1), train_y)

    negP = cluster(neg_pool.vectors, "background").centroids
    foul, kept = partition_positive_components(pos_pool, negP, cfg.retain_min)
    fouP = cluster(foul.vectors, "fouling").centroids
    extra = kept.vectors
    n_fouling = len(foul)
    history = [train_ap(negP, fouP)]
    for _ in range(cfg.refine_rounds):
        negP = cluster(np.concatenate([neg_pool.vectors, extra]), "background").centroids
        foul, kept = partition_positive_components(pos_pool, negP, cfg.retain_min)
        # over-cluster so clean and fouled content land in separate clusters
        fine = spherical_kmeans(foul.vectors, min(2 * M, len(foul)), seed)
        reject = _explained_by_background(foul, fine.labels, fine.centroids, negP)
        if int((~reject).sum()) < M:
            reject[:] = False
        fouP = cluster(foul.vectors[~reject], "fouling").centroids
        extra = np.concatenate([kept.vectors, foul.vectors[reject]])
        n_fouling = int((~reject).sum())
        history.append(train_ap(negP, fouP))
    sizes = {"background": int(neg_pool.vectors.shape[0] + extra.shape[0]),
             "fouling": n_fouling, "retained": int(len(kept))}
    return negP, fouP, tuple(history), sizes


def fit_bank(data: LabeledEmbeddingSet, cfg: FitConfig | None = None,
             n_jobs: int = 1) -> tuple[PrototypeBank, FitReport]:
    """Fit a two-class prototype bank, selecting the seed with best validation AP.

    Seeds may run in parallel threads (``n_jobs``); results are reduced in
    seed order so the outcome does not depend on scheduling.
    """
    cfg = cfg or FitConfig()
    if len(data) == 0:
        raise EmptyDataset("labelled set is empty")
    train, val = data.train_validation()
    y_train = train.presence
    if not y_train.any():
        raise MissingClassData("training split has no frames with fouling present")
    if y_train.all():
        raise MissingClassData("training split has no frames without fouling")
    if len(val) == 0:
        raise EmptyDataset("validation split is empty")

    k = cfg.components_per_image
    train_pool = collect_components(train, k, cfg.max_iter)
    val_pool = collect_components(val, k, cfg.max_iter)
    neg_pool = train_pool.where(~train_pool.label)
    pos_pool = train_pool.where(train_pool.label)
    y_val = val.presence
    log.info("fit: %d train frames, %d validation frames, %d seeds",
             len(train), len(val), len(cfg.seeds))

    def run(seed):
        negP, fouP, history, sizes = _fit_one_seed(neg_pool, pos_pool, train_pool.assignments,
                                                   y_train, cfg, seed)
        bank = _make_bank(negP, fouP, cfg)
        ap = average_precision(_fouling_confidence(val_pool.assignments, bank, 1), y_val)
        log.info("fit: seed=%d validation_ap=%.6f", seed, ap)
        return negP, fouP, history, sizes, ap

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, cfg.seeds))
    else:
        results = [run(s) for s in cfg.seeds]

    seed_ap = {s: r[4] for s, r in zip(cfg.seeds, results)}
    best = max(seed_ap.values())
    chosen = min(s for s, ap in seed_ap.items() if ap == best)
    negP, fouP, _, sizes, _ = results[cfg.seeds.index(chosen)]
    report = FitReport(seed_ap=seed_ap, chosen_seed=chosen, pool_sizes=sizes,
                       rounds=cfg.refine_rounds,
                       round_train_ap={s: r[2] for s, r in zip(cfg.seeds, results)})
    metadata = {"fit_seed": chosen, "config_digest": cfg.digest(), "config": asdict(cfg),
                "creator": f"foulscope {__version__}", "fit_report": report.to_dict()}
    metadata["config"]["seeds"] = list(cfg.seeds)
    return _make_bank(negP, fouP, cfg, metadata), report


@dataclass(frozen=True)
class Exemplar:
    frame_id: str
    component: int
    cosine: float


@dataclass(frozen=True)
class PrototypeExemplars:
    class_name: str
    prototype_index: int
    exemplars: tuple[Exemplar, ...]


def exemplars(bank: PrototypeBank, data: LabeledEmbeddingSet | Sequence[EmbeddedFrame] | ComponentPool,
              n: int = 5, k: int = 5, max_iter: int = 100) -> list[PrototypeExemplars]:
    """Top-``n`` most similar training components for every prototype.

    Ordered by descending raw cosine; ties keep frame order, then component
    order.
    """
    check_count(n, "n")
    pool = data if isinstance(data, ComponentPool) else collect_components(data, k, max_iter)
    if len(pool) == 0:
        raise EmptyDataset("no components to draw exemplars from")
    cos = pool.vectors @ bank.all_prototypes.T
    out = []
    owner = bank.prototype_owner
    for p in range(cos.shape[1]):
        ci = int(owner[p])
        local = p - int(np.flatnonzero(owner == ci)[0])
        top = np.argsort(-cos[:, p], kind="stable")[:n]
        out.append(PrototypeExemplars(
            class_name=bank.class_names[ci], prototype_index=local,
            exemplars=tuple(Exemplar(pool.frame_ids[pool.frame_index[i]], int(pool.component[i]),
                                     float(cos[i, p])) for i in top)))
    return out


class PrototypeClassifier(ClassifierMixin, BaseEstimator):
    """Interpretable presence/absence classifier over embedded frames.

    ``X`` is a sequence of :class:`~foulscope.core.EmbeddedFrame` and ``y`` a
    binary presence label per frame. After fitting, ``bank_`` holds the
    prototype bank and ``report_`` the per-seed validation results.

    Parameters
    ----------
    prototypes_per_class, components, refine_rounds, retain_min, temperature
        See :class:`FitConfig`.
    seeds : int or sequence of int, default=10
        An int ``n`` means seeds ``0 .. n-1``.
    coverage_threshold : float, default=0.5
        Patch score at or above which a patch counts as covered.
    threshold : float, default=0.5
        Confidence at or above which :meth:`predict` returns 1.
    """

    def __init__(self, prototypes_per_class=10, components=5, seeds=10, refine_rounds=3,
                 retain_min=1, temperature=0.1, coverage_threshold=0.5, threshold=0.5,
                 max_iter=100, n_jobs=1):
        self.prototypes_per_class = prototypes_per_class
        self.components = components
        self.seeds = seeds
        self.refine_rounds = refine_rounds
        self.retain_min = retain_min
        self.temperature = temperature
        self.coverage_threshold = coverage_threshold
        self.threshold = threshold
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def _config(self) -> FitConfig:
        seeds = range(self.seeds) if isinstance(self.seeds, (int, np.integer)) else self.seeds
        return FitConfig(prototypes_per_class=self.prototypes_per_class,
                         components_per_image=self.components, seeds=tuple(seeds),
                         refine_rounds=self.refine_rounds, retain_min=self.retain_min,
                         temperature=self.temperature, max_iter=self.max_iter)

    def fit(self, X, y, split=None):
        data = LabeledEmbeddingSet.from_arrays(list(X), np.asarray(y).astype(bool), split=split)
        self.bank_, self.report_ = fit_bank(data, self._config(), n_jobs=self.n_jobs)
        self.classes_ = np.array([0, 1])
        return self

    def _predictions(self, X):
        check_is_fitted(self, "bank_")
        cfg = InferenceConfig(k=self.components, max_iter=self.max_iter,
                              coverage_threshold=self.coverage_threshold)
        return [predict_frame(f, self.bank_, cfg) for f in X]

    def decision_function(self, X) -> np.ndarray:
        return np.array([p.fouling_confidence for p in self._predictions(X)])

    def predict_proba(self, X) -> np.ndarray:
        conf = self.decision_function(X)
        return np.column_stack([1.0 - conf, conf])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= self.threshold).astype(int)

    def coverage(self, X) -> np.ndarray:
        return np.array([p.coverage for p in self._predictions(X)])

    def score(self, X, y, sample_weight=None) -> float:
        """Average precision of the fouling confidence (not accuracy)."""
        return average_precision(self.decision_function(X), y)
