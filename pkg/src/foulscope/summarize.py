"""Representative frame selection (simple k-means prototype selection).

Frames are clustered on their normalised global embeddings and the member
closest to each cluster centre is kept, giving a short strip of frames that
covers the visual variety of a transect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import EmbeddedFrame
from .errors import EmptyDataset, InvalidK
from .kmeans import spherical_kmeans
from .validation import check_count, unit_rows


@dataclass(frozen=True)
class Selection:
    frame_id: str
    timestamp_s: float
    cluster: int


def _medoid_indices(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
                    timestamps: np.ndarray) -> list[tuple[int, int]]:
    picks = []
    for j in range(centroids.shape[0]):
        members = np.flatnonzero(labels == j)
        cos = X[members] @ centroids[j]
        tied = members[cos == cos.max()]
        picks.append((int(tied[np.argmin(timestamps[tied])]), j))
    return picks


def skmps(globals_, frame_ids: Sequence[str], timestamps, c: int, seed: int = 0) -> tuple[Selection, ...]:
    """Pick one real frame per cluster of global embeddings, ordered by time.

    Within a cluster the frame with the highest cosine to the centroid wins;
    exact ties go to the earliest timestamp.
    """
    X = np.asarray(globals_, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("no frames to summarise")
    X = unit_rows(X, "global embeddings")
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(frame_ids) != X.shape[0] or ts.shape[0] != X.shape[0]:
        raise ValueError("frame_ids, timestamps and embeddings must align")
    if isinstance(c, bool) or not isinstance(c, (int, np.integer)) or not 1 <= c <= X.shape[0]:
        raise InvalidK(f"cluster count {c!r} must lie in [1, {X.shape[0]}]")
    res = spherical_kmeans(X, int(c), seed)
    picks = _medoid_indices(X, res.labels, res.centroids, ts)
    picks.sort(key=lambda p: (ts[p[0]], p[0]))
    return tuple(Selection(str(frame_ids[i]), float(ts[i]), j) for i, j in picks)


@dataclass(frozen=True)
class SummarySelection:
    fouling_present: tuple[Selection, ...]
    fouling_absent: tuple[Selection, ...]
    per_group: int

    def groups(self) -> dict[bool, tuple[Selection, ...]]:
        return {True: self.fouling_present, False: self.fouling_absent}

    def to_dict(self) -> dict:
        def rows(sel):
            return [{"frame_id": s.frame_id, "timestamp_s": s.timestamp_s, "cluster": s.cluster}
                    for s in sel]

        return {"per_group": self.per_group, "fouling_present": rows(self.fouling_present),
                "fouling_absent": rows(self.fouling_absent)}


def summarize_by_class(timeline, frames: Sequence[EmbeddedFrame] | Mapping[str, np.ndarray],
                       per_group: int = 8, seed: int = 0) -> SummarySelection:
    """Run :func:`skmps` separately on fouled and clean hull-present frames.

    ``timeline`` is a sequence of finalised timeline points; ``frames`` maps
    frame ids to global embeddings (or is a sequence of frames).
    """
    check_count(per_group, "per_group")
    lookup = frames if isinstance(frames, Mapping) else {f.frame_id: f.global_embedding for f in frames}
    out = {}
    for flag in (True, False):
        pts = [p for p in timeline if p.hull_present and p.fouling_present == flag]
        if not pts:
            out[flag] = ()
            continue
        X = np.stack([lookup[p.frame_id] for p in pts])
        out[flag] = skmps(X, [p.frame_id for p in pts], [p.timestamp_s for p in pts],
                          min(per_group, len(pts)), seed)
    return SummarySelection(fouling_present=out[True], fouling_absent=out[False], per_group=per_group)


class SKMPSSelector(BaseEstimator):
    """Estimator form of :func:`skmps` on a matrix of global embeddings.

    After ``fit(X)``, ``selected_indices_`` lists the chosen rows in time
    order (row order when no timestamps are given).
    """

    def __init__(self, n_clusters=8, random_state=0):
        self.n_clusters = n_clusters
        self.random_state = random_state

    def fit(self, X, y=None, timestamps=None):
        X = check_array(X, dtype=np.float64)
        ts = np.arange(X.shape[0], dtype=np.float64) if timestamps is None else np.asarray(timestamps, float)
        ids = [str(i) for i in range(X.shape[0])]
        sel = skmps(X, ids, ts, self.n_clusters, self.random_state)
        self.selected_indices_ = np.array([int(s.frame_id) for s in sel])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_indices_")
        return np.asarray(X)[self.selected_indices_]
