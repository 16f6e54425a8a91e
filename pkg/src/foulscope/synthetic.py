"""Planted-direction fixtures: frames, labelled sets, banks and transects.

Every generator is driven by an explicit seed so fixtures are reproducible.
The ground-truth directions are returned alongside the data so recovery can
be checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddedFrame, PrototypeBank
from .fitting import FrameLabel, LabeledEmbeddingSet


def planted_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` random unit vectors; mutually orthogonal when ``n <= dim``."""
    A = rng.standard_normal((dim, max(n, 1)))
    if n <= dim:
        Q, _ = np.linalg.qr(A)
        return Q[:, :n].T.copy()
    A = A.T
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def perturb(directions: np.ndarray, min_cos: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors whose cosine to the matching row of ``directions`` is in ``[min_cos, 1]``."""
    D = np.atleast_2d(directions)
    noise = rng.standard_normal(D.shape)
    noise -= np.einsum("ij,ij->i", noise, D)[:, None] * D
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    cos = rng.uniform(min_cos, 1.0, size=D.shape[0])
    return cos[:, None] * D + np.sqrt(1.0 - cos**2)[:, None] * noise


def make_frame(frame_id: str, timestamp_s: float, component_dirs: np.ndarray, rng: np.random.Generator,
               grid: tuple[int, int] = (4, 5), min_cos: float = 0.98) -> EmbeddedFrame:
    """Frame whose patches are split into contiguous blocks, one per direction."""
    h, w = grid
    n = h * w
    block = np.minimum(np.arange(n) * len(component_dirs) // n, len(component_dirs) - 1)
    patches = perturb(component_dirs[block], min_cos, rng)
    glob = patches.mean(axis=0)
    glob = perturb(glob / np.linalg.norm(glob), 0.995, rng)[0]
    return EmbeddedFrame(frame_id, timestamp_s, h, w, patches, glob)


@dataclass(frozen=True, eq=False)
class PlantedSet:
    data: LabeledEmbeddingSet
    fouling_dirs: np.ndarray
    clean_dirs: np.ndarray


def planted_dataset(n_pos: int = 120, n_neg: int = 120, dim: int = 64, k: int = 5, n_dirs: int = 10,
                    fouling_per_image: tuple[int, int] = (1, 3), grid: tuple[int, int] = (4, 5),
                    min_cos: float = 0.98, seed: int = 0) -> PlantedSet:
    """Presence/absence set built from ``n_dirs`` fouling and ``n_dirs`` clean directions.

    Clean images hold ``k`` distinct clean directions; fouled images hold
    between ``fouling_per_image`` fouling directions, the rest clean. Frames
    are interleaved positive/negative and the default split (every fifth
    train frame held out) applies.
    """
    if n_dirs < k or not 1 <= fouling_per_image[0] <= fouling_per_image[1] < k:
        raise ValueError("need n_dirs >= k and 1 <= fouling_per_image < k")
    rng = np.random.default_rng(seed)
    dirs = planted_directions(2 * n_dirs, dim, rng)
    F, B = dirs[:n_dirs], dirs[n_dirs:]
    frames, labels = [], []
    flags = np.array([True, False] * max(n_pos, n_neg))
    pos = neg = 0
    for flag in flags:
        if flag and pos >= n_pos or not flag and neg >= n_neg:
            continue
        if flag:
            nf = int(rng.integers(fouling_per_image[0], fouling_per_image[1] + 1))
            comp = np.concatenate([F[rng.choice(n_dirs, nf, replace=False)],
                                   B[rng.choice(n_dirs, k - nf, replace=False)]])
            slof = 1 if nf == 1 else 2
            pos += 1
        else:
            comp = B[rng.choice(n_dirs, k, replace=False)]
            slof = 0
            neg += 1
        comp = comp[rng.permutation(k)]
        idx = len(frames)
        frames.append(make_frame(f"img{idx:05d}", float(idx), comp, rng, grid, min_cos))
        labels.append(FrameLabel(bool(flag), slof, "train"))
    return PlantedSet(LabeledEmbeddingSet(tuple(frames), tuple(labels)), F, B)


@dataclass(frozen=True, eq=False)
class SyntheticTransect:
    frames: tuple[EmbeddedFrame, ...]
    hull_bank: PrototypeBank
    fouling_bank: PrototypeBank
    native_fps: float
    fouled_interval: tuple[float, float]
    gap_interval: tuple[float, float]


def synthetic_transect(duration_s: float = 60.0, native_fps: float = 30.0,
                       fouled_interval: tuple[float, float] = (0.0, 20.0),
                       gap_interval: tuple[float, float] = (20.0, 30.0), dim: int = 32,
                       grid: tuple[int, int] = (4, 5), dropout_every: int = 7, spike_every: int = 23,
                       seed: int = 0) -> SyntheticTransect:
    """ROV-style transect with a planted fouled interval and a no-hull gap.

    Inside the fouled interval every ``dropout_every``-th frame loses its
    fouling content; on clean hull every ``spike_every``-th frame gains a
    spurious fouling component. Both make the raw per-frame flags flicker.
    """
    rng = np.random.default_rng(seed)
    dirs = planted_directions(16, dim, rng)
    hull, water, foul = dirs[:6], dirs[6:10], dirs[10:16]
    hull_bank = PrototypeBank((("no_hull", True), ("hull", False)), (water, hull), 0.1)
    fouling_bank = PrototypeBank((("no_fouling", True), ("fouling", False)),
                                 (np.concatenate([hull, water]), foul), 0.1)
    frames = []
    n = int(round(duration_s * native_fps))
    for i in range(n):
        t = i / native_fps
        in_gap = gap_interval[0] <= t < gap_interval[1]
        fouled = fouled_interval[0] <= t < fouled_interval[1]
        if in_gap:
            comp = water[rng.choice(4, 4, replace=False)]
            comp = np.concatenate([comp, water[rng.choice(4, 1)]])
        elif fouled and i % dropout_every != 0:
            comp = np.concatenate([hull[rng.choice(6, 2, replace=False)], water[rng.choice(4, 1)],
                                   foul[rng.choice(6, 2, replace=False)]])
        elif not fouled and i % spike_every == 0:
            comp = np.concatenate([hull[rng.choice(6, 3, replace=False)], water[rng.choice(4, 1)],
                                   foul[rng.choice(6, 1)]])
        else:
            comp = np.concatenate([hull[rng.choice(6, 3, replace=False)], water[rng.choice(4, 2, replace=False)]])
        frames.append(make_frame(f"frame{i:06d}", t, comp, rng, grid))
    return SyntheticTransect(tuple(frames), hull_bank, fouling_bank, native_fps,
                             fouled_interval, gap_interval)
