"""Transect analysis: frame sampling, hull filtering, dual-bank scoring,
per-segment smoothing and report assembly."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .core import EmbeddedFrame, InferenceConfig, PrototypeBank, cluster_components, predict_frame
from .errors import DimMismatch, EmptyStream, InvalidRate, NonMonotoneTime
from .smoothing import gaussian_smooth
from .summarize import SummarySelection, summarize_by_class
from .validation import check_count, check_fraction, check_positive

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimelineConfig:
    sample_fps: float = 10.0
    bandwidth_s: float = 1.0
    truncation: float = 4.0
    hull_threshold: float = 0.75
    fouling_threshold: float = 0.25
    coverage_threshold: float = 0.5
    gap_s: float = 2.0
    components: int = 5
    max_iter: int = 100
    per_group: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("sample_fps", "bandwidth_s", "truncation", "gap_s"):
            check_positive(getattr(self, name), name)
        for name in ("hull_threshold", "fouling_threshold", "coverage_threshold"):
            check_fraction(getattr(self, name), name)
        check_count(self.components, "components")
        check_count(self.max_iter, "max_iter")
        check_count(self.per_group, "per_group")

    def inference(self) -> InferenceConfig:
        return InferenceConfig(k=self.components, max_iter=self.max_iter,
                               coverage_threshold=self.coverage_threshold)


@dataclass(frozen=True)
class TimelinePoint:
    frame_id: str
    timestamp_s: float
    hull_confidence: float
    hull_present: bool
    fouling_confidence_raw: float | None = None
    coverage_raw: float | None = None
    fouling_confidence_smoothed: float | None = None
    coverage_smoothed: float | None = None
    fouling_present: bool = False


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    indices: tuple[int, ...]

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def sample_stride(native_fps: float, sample_fps: float) -> int:
    if not (native_fps > 0 and sample_fps > 0) or not (math.isfinite(native_fps) and math.isfinite(sample_fps)):
        raise InvalidRate(f"frame rates must be positive (native={native_fps}, sample={sample_fps})")
    if sample_fps > native_fps:
        raise InvalidRate(f"sample rate {sample_fps} fps exceeds native rate {native_fps} fps")
    return max(1, int(math.floor(native_fps / sample_fps + 0.5)))


def sample_frames(source: Iterable[EmbeddedFrame], native_fps: float,
                  sample_fps: float = 10.0) -> Iterator[EmbeddedFrame]:
    """Keep every n-th frame, n = round(native / sample), starting with the first."""
    stride = sample_stride(native_fps, sample_fps)
    return itertools.islice(source, 0, None, stride)


def estimate_fps(timestamps: Sequence[float]) -> float | None:
    """Frame rate implied by the median spacing of ``timestamps``."""
    if len(timestamps) < 2:
        return None
    dt = float(np.median(np.diff(np.asarray(timestamps, dtype=np.float64))))
    return round(1.0 / dt, 6) if dt > 0 else None


def score_frame(frame: EmbeddedFrame, hull_bank: PrototypeBank, fouling_bank: PrototypeBank,
                cfg: TimelineConfig) -> TimelinePoint:
    """Hull check, then fouling scoring when a hull is present.

    The component clustering is computed once and shared by both banks.
    """
    for bank in (hull_bank, fouling_bank):
        if bank.dim != frame.dim:
            raise DimMismatch(f"frame {frame.frame_id!r} dim {frame.dim} != bank dim {bank.dim}")
    icfg = cfg.inference()
    assignment = cluster_components(frame, icfg.k, icfg.max_iter)
    hull = predict_frame(frame, hull_bank, icfg, assignment)
    present = hull.fouling_confidence >= cfg.hull_threshold
    if not present:
        return TimelinePoint(frame.frame_id, frame.timestamp_s, hull.fouling_confidence, False)
    foul = predict_frame(frame, fouling_bank, icfg, assignment)
    return TimelinePoint(frame.frame_id, frame.timestamp_s, hull.fouling_confidence, True,
                         fouling_confidence_raw=foul.fouling_confidence, coverage_raw=foul.coverage)


def _scored(frames: Iterable[EmbeddedFrame], hull_bank, fouling_bank, cfg, n_jobs: int,
            keep_globals: dict | None):
    def work(frame):
        return score_frame(frame, hull_bank, fouling_bank, cfg)

    it = iter(frames)
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        while True:
            chunk = list(itertools.islice(it, 256))
            if not chunk:
                break
            if keep_globals is not None:
                for f in chunk:
                    keep_globals[f.frame_id] = f.global_embedding
            yield from (pool.map(work, chunk) if pool else map(work, chunk))
    finally:
        if pool:
            pool.shutdown()


def _ordered(points: list[TimelinePoint]) -> list[TimelinePoint]:
    if not points:
        raise EmptyStream("no frames to score")
    points.sort(key=lambda p: p.timestamp_s)
    ts = np.array([p.timestamp_s for p in points])
    if ts.size > 1 and not np.all(np.diff(ts) > 0):
        i = int(np.flatnonzero(np.diff(ts) <= 0)[0])
        raise NonMonotoneTime(f"duplicate timestamp {ts[i]} ({points[i].frame_id!r}, {points[i + 1].frame_id!r})")
    return points


def score_timeline(frames: Iterable[EmbeddedFrame], hull_bank: PrototypeBank,
                   fouling_bank: PrototypeBank, cfg: TimelineConfig | None = None,
                   n_jobs: int = 1) -> list[TimelinePoint]:
    """Raw (unsmoothed) timeline points ordered by timestamp."""
    cfg = cfg or TimelineConfig()
    return _ordered(list(_scored(frames, hull_bank, fouling_bank, cfg, n_jobs, None)))


def segment_by_hull(points: Sequence[TimelinePoint], gap_s: float = 2.0) -> list[Segment]:
    """Maximal runs of hull-present points with no time step larger than ``gap_s``.

    Points without a hull are skipped, so a short dropout does not split a
    segment but a long one does.
    """
    segments: list[Segment] = []
    current: list[int] = []
    last_t = None
    for i, p in enumerate(points):
        if not p.hull_present:
            continue
        if current and p.timestamp_s - last_t > gap_s:
            segments.append(Segment(points[current[0]].timestamp_s, last_t, tuple(current)))
            current = []
        current.append(i)
        last_t = p.timestamp_s
    if current:
        segments.append(Segment(points[current[0]].timestamp_s, last_t, tuple(current)))
    return segments


def finalize_timeline(points: Sequence[TimelinePoint], cfg: TimelineConfig | None = None
                      ) -> tuple[list[TimelinePoint], list[Segment]]:
    """Smooth confidence and coverage within each hull segment and set fouling flags."""
    cfg = cfg or TimelineConfig()
    out = list(points)
    segments = segment_by_hull(out, cfg.gap_s)
    for seg in segments:
        idx = list(seg.indices)
        t = [out[i].timestamp_s for i in idx]
        conf = gaussian_smooth(t, [out[i].fouling_confidence_raw for i in idx], cfg.bandwidth_s, cfg.truncation)
        cov = gaussian_smooth(t, [out[i].coverage_raw for i in idx], cfg.bandwidth_s, cfg.truncation)
        for i, c, v in zip(idx, conf, cov):
            out[i] = replace(out[i], fouling_confidence_smoothed=float(c), coverage_smoothed=float(v),
                             fouling_present=bool(c >= cfg.fouling_threshold))
    return out, segments


def flag_transitions(flags: Sequence[bool]) -> int:
    f = np.asarray(flags, dtype=bool)
    return int(np.count_nonzero(f[1:] != f[:-1]))


@dataclass(frozen=True)
class TransectReport:
    timeline: tuple[TimelinePoint, ...]
    segments: tuple[Segment, ...]
    summary: dict
    selected_frames: SummarySelection
    config: TimelineConfig

    @property
    def hull_points(self) -> list[TimelinePoint]:
        return [p for p in self.timeline if p.hull_present]


def _summary(points: Sequence[TimelinePoint], segments: Sequence[Segment], cfg: TimelineConfig) -> dict:
    hull = [p for p in points if p.hull_present]
    fouled = [p for p in hull if p.fouling_present]
    raw_flags = [p.fouling_confidence_raw >= cfg.fouling_threshold for p in hull]

    def seg_stats(seg: Segment) -> dict:
        pts = [points[i] for i in seg.indices]
        return {
            "start_s": seg.start_s,
            "end_s": seg.end_s,
            "n_points": len(pts),
            "fouled_fraction": sum(p.fouling_present for p in pts) / len(pts),
            "peak_smoothed_confidence": max(p.fouling_confidence_smoothed for p in pts),
            "peak_smoothed_coverage": max(p.coverage_smoothed for p in pts),
            "mean_smoothed_coverage": float(np.mean([p.coverage_smoothed for p in pts])),
        }

    return {
        "n_frames": len(points),
        "n_hull_present": len(hull),
        "n_fouling_present": len(fouled),
        "fouled_fraction": len(fouled) / len(hull) if hull else 0.0,
        "peak_smoothed_coverage": max((p.coverage_smoothed for p in hull), default=0.0),
        "smoothed_flag_transitions": sum(
            flag_transitions([points[i].fouling_present for i in s.indices]) for s in segments),
        "raw_flag_transitions": sum(
            flag_transitions([points[i].fouling_confidence_raw >= cfg.fouling_threshold for i in s.indices])
            for s in segments),
        "n_raw_fouling_present": int(sum(raw_flags)),
        "segments": [seg_stats(s) for s in segments],
    }


Summarizer = Callable[[Sequence[TimelinePoint], dict, int, int], SummarySelection]


def build_report(frames: Iterable[EmbeddedFrame], hull_bank: PrototypeBank, fouling_bank: PrototypeBank,
                 cfg: TimelineConfig | None = None, summarizer: Summarizer | None = None,
                 native_fps: float | None = None, n_jobs: int = 1) -> TransectReport:
    """Score, smooth, segment and summarise a stream of embedded frames.

    When ``native_fps`` is given the stream is first subsampled to
    ``cfg.sample_fps``; otherwise frames are taken as already sampled. The
    stream is consumed once and only global embeddings are retained.
    """
    cfg = cfg or TimelineConfig()
    if native_fps is not None:
        frames = sample_frames(frames, native_fps, cfg.sample_fps)
    globals_: dict[str, np.ndarray] = {}
    raw = _ordered(list(_scored(frames, hull_bank, fouling_bank, cfg, n_jobs, globals_)))
    points, segments = finalize_timeline(raw, cfg)
    summarizer = summarizer or summarize_by_class
    selection = summarizer(points, globals_, cfg.per_group, cfg.seed)
    summary = _summary(points, segments, cfg)
    log.info("report: frames=%d hull_present=%d fouled_fraction=%.4f",
             summary["n_frames"], summary["n_hull_present"], summary["fouled_fraction"])
    return TransectReport(timeline=tuple(points), segments=tuple(segments), summary=summary,
                          selected_frames=selection, config=cfg)
