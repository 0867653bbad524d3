"""Yaw-driven frame selection for training tuples and inference sources.

All thresholds are strict.  Samplers draw uniformly over the set of valid
tuples: an ``(A, C)`` pair is chosen with probability proportional to the
number of drivings it admits, then the drivings are drawn uniformly.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import PoseTrack
from .errors import EmptyInput, NoValidSample

MIN_SPAN = 0.3
NEAR_TOL = 0.1
ROTATION_THRESHOLD = 1.5


class Triplet(NamedTuple):
    a: int
    c: int
    b: int


class Quad(NamedTuple):
    a: int
    c: int
    b1: int
    b2: int


def _yaws(track) -> np.ndarray:
    y = track.yaws if isinstance(track, PoseTrack) else np.asarray(track, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("yaws must be finite")
    return y


def _generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _pair_stats(y: np.ndarray, min_span: float):
    """Valid (A, C) index pairs and, for each, how many B satisfy y[C] < y[B] < y[A]."""
    srt = np.sort(y)
    below = np.searchsorted(srt, y, side="left")   # frames strictly lower
    at_most = np.searchsorted(srt, y, side="right")  # frames lower or equal
    span = y[:, None] - y[None, :]
    a_idx, c_idx = np.nonzero(span > min_span)
    n_between = below[a_idx] - at_most[c_idx]
    return a_idx, c_idx, n_between


def triplet_weights(track, min_span: float = MIN_SPAN):
    """``(a_idx, c_idx, weights)``: every candidate (A, C) pair and its number of valid B."""
    y = _yaws(track)
    a_idx, c_idx, nb = _pair_stats(y, min_span)
    keep = nb > 0
    return a_idx[keep], c_idx[keep], nb[keep]


def count_triplets(track, min_span: float = MIN_SPAN) -> int:
    return int(triplet_weights(track, min_span)[2].sum())


def sample_triplet(track, min_span: float = MIN_SPAN, rng=None) -> Triplet:
    """Draw (A, C, B) with yaw_A > yaw_B > yaw_C and yaw_A - yaw_C > ``min_span``."""
    y = _yaws(track)
    if y.size < 3:
        raise NoValidSample("a triplet needs at least three frames")
    a_idx, c_idx, w = triplet_weights(y, min_span)
    if w.size == 0:
        raise NoValidSample(f"no frame triple spans more than {min_span} rad")
    gen = _generator(rng)
    k = int(np.searchsorted(np.cumsum(w), gen.integers(0, int(w.sum())), side="right"))
    a, c = int(a_idx[k]), int(c_idx[k])
    between = np.flatnonzero((y > y[c]) & (y < y[a]))
    return Triplet(a, c, int(between[gen.integers(0, between.size)]))


def quad_weights(track, min_span: float = MIN_SPAN, near_tol: float = NEAR_TOL):
    """``(a_idx, c_idx, weights)``: candidate (A, C) pairs and their number of valid (B1, B2)."""
    y = _yaws(track)
    a_idx, c_idx, nb1 = _pair_stats(y, min_span)
    near = np.abs(y[:, None] - y[None, :]) < near_tol
    np.fill_diagonal(near, False)
    nb2 = near.sum(axis=1)[a_idx]
    # B1 == B2 pairs: frames in (y_C, y_A) that are also near A
    ya, yc = y[a_idx], y[c_idx]
    both = ((y[None, :] > yc[:, None]) & (y[None, :] < ya[:, None]) & near[a_idx]).sum(axis=1)
    # B2 == C is only possible when near_tol exceeds min_span
    w = nb1 * nb2 - both - nb1 * near[a_idx, c_idx]
    keep = w > 0
    return a_idx[keep], c_idx[keep], w[keep]


def count_quads(track, min_span: float = MIN_SPAN, near_tol: float = NEAR_TOL) -> int:
    return int(quad_weights(track, min_span, near_tol)[2].sum())


def sample_quad(track, min_span: float = MIN_SPAN, near_tol: float = NEAR_TOL, rng=None) -> Quad:
    """Draw (A, C, B1, B2): a triplet (A, B1, C) plus a second driving B2 with |yaw_A - yaw_B2| < ``near_tol``.

    All four frames are distinct.
    """
    y = _yaws(track)
    if y.size < 4:
        raise NoValidSample("a quadruplet needs at least four frames")
    a_idx, c_idx, w = quad_weights(y, min_span, near_tol)
    if w.size == 0:
        raise NoValidSample("no frame quadruplet satisfies the span and nearness constraints")
    gen = _generator(rng)
    k = int(np.searchsorted(np.cumsum(w), gen.integers(0, int(w.sum())), side="right"))
    a, c = int(a_idx[k]), int(c_idx[k])
    b1s = np.flatnonzero((y > y[c]) & (y < y[a]))
    b2s = np.flatnonzero(np.abs(y[a] - y) < near_tol)
    b2s = b2s[(b2s != a) & (b2s != c)]
    while True:
        b1 = int(b1s[gen.integers(0, b1s.size)])
        b2 = int(b2s[gen.integers(0, b2s.size)])
        if b1 != b2:
            return Quad(a, c, b1, b2)


def relaxed_triplet(track) -> Triplet:
    """Widest-span fallback: A = max yaw, C = min yaw, B the in-between frame closest to the midpoint.

    Ties go to the earliest frame.  Ignores the span threshold.
    """
    y = _yaws(track)
    if y.size < 3:
        raise NoValidSample("a triplet needs at least three frames")
    a, c = int(np.argmax(y)), int(np.argmin(y))
    between = np.flatnonzero((y > y[c]) & (y < y[a]))
    if between.size == 0:
        raise NoValidSample("no frame lies strictly between the yaw extrema")
    mid = 0.5 * (y[a] + y[c])
    b = int(between[np.argmin(np.abs(y[between] - mid))])
    return Triplet(a, c, b)


def select_sources(track: PoseTrack, n_extra: int = 2) -> list[int]:
    """Frontal eyes-open frame first, then the max-yaw and min-yaw frames.

    ``n_extra`` (0 to 2) limits how many extrema are appended; duplicates are
    dropped keeping the first occurrence.  Ties go to the earliest frame.
    Returns positions within ``track``.
    """
    y = _yaws(track)
    if y.size == 0:
        raise EmptyInput("cannot select sources from an empty track")
    if not 0 <= n_extra <= 2:
        raise ValueError("n_extra must be 0, 1 or 2")
    eyes = track.eyes_open if isinstance(track, PoseTrack) else np.ones(y.size, dtype=bool)
    pool = np.flatnonzero(eyes)
    if pool.size == 0:
        pool = np.arange(y.size)
    picks = [int(pool[np.argmin(np.abs(y[pool]))])]
    picks += [int(np.argmax(y)), int(np.argmin(y))][:n_extra]
    out: list[int] = []
    for p in picks:
        if p not in out:
            out.append(p)
    return out


def yaw_range(track) -> float:
    y = _yaws(track)
    return float(y.max() - y.min()) if y.size else 0.0


def filter_rotation_tracks(tracks: Iterable, threshold: float = ROTATION_THRESHOLD) -> list:
    """Keep tracks whose yaw range (max - min) strictly exceeds ``threshold``."""
    return [t for t in tracks if len(_yaws(t)) and yaw_range(t) > threshold]


def format_samples(samples: Sequence[Sequence[int]]) -> str:
    """One space-separated index tuple per line."""
    return "".join(" ".join(str(int(i)) for i in s) + "\n" for s in samples)
