"""Frames, prototype banks and component-feature inference.

A frame's patch embeddings are grouped into ``k`` component features by
deterministic spherical k-means. Each component centroid is scored against
every class prototype with a temperature softmax over cosine similarity, and
a class's probability is the summed weight of its prototypes. Patches inherit
their component's distribution, which yields the confidence heatmap; the
image-level confidence of a class is the maximum over components.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DimMismatch, InvalidK, NonFinite, ZeroVector
from .kmeans import farthest_first_init, lloyd
from .validation import ZERO_NORM, check_count, check_fraction, check_positive, unit_rows


def normalize_embedding(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    >>> normalize_embedding([3.0, 4.0])
    array([0.6, 0.8])
    """
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite("vector contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if norm <= ZERO_NORM:
        raise ZeroVector(f"vector norm {norm:g} is too small to normalise")
    return arr / norm


@dataclass(frozen=True, eq=False)
class EmbeddedFrame:
    """Patch-embedding grid and global embedding of one video frame or image.

    ``patch_embeddings`` may be given as ``(grid_h * grid_w, dim)`` or
    ``(grid_h, grid_w, dim)``; it is stored flattened row-major. All vectors
    are normalised on construction and stored read-only as float64.
    """

    frame_id: str
    timestamp_s: float
    grid_h: int
    grid_w: int
    patch_embeddings: np.ndarray
    global_embedding: np.ndarray

    def __post_init__(self):
        if not isinstance(self.frame_id, str):
            raise TypeError("frame_id must be a string")
        ts = float(self.timestamp_s)
        if not math.isfinite(ts) or ts < 0:
            raise NonFinite(f"frame {self.frame_id!r}: timestamp must be finite and >= 0, got {ts}")
        check_count(self.grid_h, "grid_h")
        check_count(self.grid_w, "grid_w")
        patches = np.asarray(self.patch_embeddings, dtype=np.float64)
        if patches.ndim == 3:
            patches = patches.reshape(-1, patches.shape[-1])
        n = self.grid_h * self.grid_w
        if patches.ndim != 2 or patches.shape[0] != n:
            raise DimMismatch(
                f"frame {self.frame_id!r}: expected {n} patch vectors, got array of shape {patches.shape}")
        if patches.shape[1] < 2:
            raise DimMismatch(f"frame {self.frame_id!r}: embedding dim must be >= 2")
        glob = np.asarray(self.global_embedding, dtype=np.float64).reshape(1, -1)
        if glob.shape[1] != patches.shape[1]:
            raise DimMismatch(
                f"frame {self.frame_id!r}: global dim {glob.shape[1]} != patch dim {patches.shape[1]}")
        object.__setattr__(self, "timestamp_s", ts)
        object.__setattr__(self, "grid_h", int(self.grid_h))
        object.__setattr__(self, "grid_w", int(self.grid_w))
        object.__setattr__(self, "patch_embeddings", unit_rows(patches, f"frame {self.frame_id!r} patches"))
        object.__setattr__(self, "global_embedding", unit_rows(glob, f"frame {self.frame_id!r} global")[0])

    @property
    def dim(self) -> int:
        return self.patch_embeddings.shape[1]

    @property
    def n_patches(self) -> int:
        return self.patch_embeddings.shape[0]

    def with_identity(self, frame_id: str, timestamp_s: float) -> "EmbeddedFrame":
        """Copy sharing the (immutable) embedding arrays under a new id and time."""
        ts = float(timestamp_s)
        if not math.isfinite(ts) or ts < 0:
            raise NonFinite(f"timestamp must be finite and >= 0, got {ts}")
        other = copy.copy(self)
        object.__setattr__(other, "frame_id", str(frame_id))
        object.__setattr__(other, "timestamp_s", ts)
        return other


@dataclass(frozen=True, eq=False)
class ComponentAssignment:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    iterations: int
    inertia: float
    inertia_history: tuple[float, ...] = ()


def cluster_components(frame: EmbeddedFrame, k: int = 5, max_iter: int = 100) -> ComponentAssignment:
    """Group a frame's patches into ``k`` component features.

    Seeds by farthest-first traversal from patch 0, then runs Lloyd
    iterations on cosine similarity. Fully deterministic.
    """
    n = frame.n_patches
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise InvalidK(f"frame {frame.frame_id!r}: k={k!r} must lie in [1, {n}]")
    check_count(max_iter, "max_iter")
    X = frame.patch_embeddings
    seeds = farthest_first_init(X, int(k))
    res = lloyd(X, X[seeds].copy(), max_iter)
    res.centroids.setflags(write=False)
    res.labels.setflags(write=False)
    return ComponentAssignment(k=int(k), centroids=res.centroids, labels=res.labels,
                               iterations=res.n_iter, inertia=res.inertia,
                               inertia_history=res.inertia_history)


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    """Named classes, each holding ``M`` unit prototype vectors.

    Exactly one class is the background class; for biofouling it stands for
    "no fouling" and absorbs clean hull, water, and survey overlays.
    """

    classes: tuple[tuple[str, bool], ...]
    prototypes: tuple[np.ndarray, ...]
    temperature: float = 0.1
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        classes = tuple((str(name), bool(bg)) for name, bg in self.classes)
        if len(classes) == 0:
            raise ValueError("a bank needs at least one class")
        names = [c[0] for c in classes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names}")
        if sum(bg for _, bg in classes) != 1:
            raise ValueError("exactly one class must be flagged as background")
        if len(self.prototypes) != len(classes):
            raise ValueError(f"{len(classes)} classes but {len(self.prototypes)} prototype arrays")
        protos = tuple(unit_rows(p, f"prototypes of {name!r}") for p, name in zip(self.prototypes, names))
        dims = {p.shape[1] for p in protos}
        if len(dims) != 1:
            raise DimMismatch(f"prototype dims differ across classes: {sorted(dims)}")
        if any(p.shape[0] < 1 for p in protos):
            raise ValueError("every class needs at least one prototype")
        check_positive(self.temperature, "temperature")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "metadata", dict(self.metadata))
        stacked = np.concatenate(protos, axis=0)
        stacked.setflags(write=False)
        object.__setattr__(self, "_stacked", stacked)
        owner = np.concatenate([np.full(p.shape[0], i) for i, p in enumerate(protos)])
        object.__setattr__(self, "_owner", owner)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.classes)

    @property
    def background(self) -> str:
        return next(name for name, bg in self.classes if bg)

    @property
    def foreground(self) -> tuple[str, ...]:
        return tuple(name for name, bg in self.classes if not bg)

    @property
    def dim(self) -> int:
        return self._stacked.shape[1]

    @property
    def all_prototypes(self) -> np.ndarray:
        return self._stacked

    @property
    def prototype_owner(self) -> np.ndarray:
        return self._owner

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise KeyError(f"bank has no class {name!r}; classes are {self.class_names}") from None


def score_components(assignment: ComponentAssignment, bank: PrototypeBank) -> np.ndarray:
    """Class probability for each component centroid, shape ``(k, n_classes)``.

    Sums are taken over sorted weights so a reordering of prototypes within a
    class cannot change any result bit.
    """
    C = assignment.centroids
    if C.shape[1] != bank.dim:
        raise DimMismatch(f"component dim {C.shape[1]} != bank dim {bank.dim}")
    P = bank.all_prototypes
    cos = (C[:, None, :] * P[None, :, :]).sum(axis=-1)
    logits = cos / bank.temperature
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    total = np.sort(w, axis=1).sum(axis=1)
    owner = bank.prototype_owner
    out = np.empty((C.shape[0], len(bank.classes)))
    for ci in range(len(bank.classes)):
        out[:, ci] = np.sort(w[:, owner == ci], axis=1).sum(axis=1)
    out /= total[:, None]
    return out


@dataclass(frozen=True, eq=False)
class ClassConfidenceMap:
    class_names: tuple[str, ...]
    grid_h: int
    grid_w: int
    component_scores: np.ndarray
    patch_scores: np.ndarray
    image_confidence: dict[str, float]
    coverage: dict[str, float]
    coverage_threshold: float

    def heatmap(self, class_name: str) -> np.ndarray:
        """Per-patch confidence for ``class_name`` laid out on the patch grid."""
        idx = self.class_names.index(class_name)
        return self.patch_scores[:, idx].reshape(self.grid_h, self.grid_w)


def confidence_map(frame: EmbeddedFrame, assignment: ComponentAssignment, bank: PrototypeBank,
                   coverage_threshold: float = 0.5) -> ClassConfidenceMap:
    theta = check_fraction(coverage_threshold, "coverage_threshold")
    if assignment.labels.shape[0] != frame.n_patches:
        raise DimMismatch(
            f"assignment covers {assignment.labels.shape[0]} patches, frame has {frame.n_patches}")
    comp = score_components(assignment, bank)
    patch = comp[assignment.labels]
    comp.setflags(write=False)
    patch.setflags(write=False)
    conf: dict[str, float] = {}
    cover: dict[str, float] = {}
    for name in bank.foreground:
        col = patch[:, bank.class_index(name)]
        conf[name] = float(col.max())
        cover[name] = float(np.count_nonzero(col >= theta)) / col.shape[0]
    return ClassConfidenceMap(class_names=bank.class_names, grid_h=frame.grid_h, grid_w=frame.grid_w,
                              component_scores=comp, patch_scores=patch, image_confidence=conf,
                              coverage=cover, coverage_threshold=theta)


@dataclass(frozen=True)
class InferenceConfig:
    k: int = 5
    max_iter: int = 100
    coverage_threshold: float = 0.5
    target_class: str | None = None

    def __post_init__(self):
        check_count(self.k, "k")
        check_count(self.max_iter, "max_iter")
        check_fraction(self.coverage_threshold, "coverage_threshold")

    def target(self, bank: PrototypeBank) -> str:
        if self.target_class is not None:
            if self.target_class not in bank.foreground:
                raise KeyError(f"{self.target_class!r} is not a foreground class of the bank")
            return self.target_class
        return bank.foreground[0]


@dataclass(frozen=True, eq=False)
class FramePrediction:
    frame_id: str
    map: ClassConfidenceMap
    assignment: ComponentAssignment
    fouling_confidence: float
    coverage: float


def predict_frame(frame: EmbeddedFrame, bank: PrototypeBank, cfg: InferenceConfig | None = None,
                  assignment: ComponentAssignment | None = None) -> FramePrediction:
    """Cluster, score and summarise one frame.

    ``assignment`` may be passed to reuse a clustering computed earlier with
    the same ``cfg.k`` (for example when scoring one frame against two banks).
    """
    cfg = cfg or InferenceConfig()
    if bank.dim != frame.dim:
        raise DimMismatch(f"frame {frame.frame_id!r} dim {frame.dim} != bank dim {bank.dim}")
    target = cfg.target(bank)
    if assignment is None:
        assignment = cluster_components(frame, cfg.k, cfg.max_iter)
    cmap = confidence_map(frame, assignment, bank, cfg.coverage_threshold)
    return FramePrediction(frame_id=frame.frame_id, map=cmap, assignment=assignment,
                           fouling_confidence=cmap.image_confidence[target],
                           coverage=cmap.coverage[target])


def stack_frames(frames: Sequence[EmbeddedFrame]) -> np.ndarray:
    """Global embeddings of ``frames`` as a ``(n, dim)`` matrix."""
    return np.stack([f.global_embedding for f in frames]) if frames else np.empty((0, 0))
