"""Landmark error and entropy reports."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .codec.prior import CONTEXTS, PriorModel
from .codec.quant import field_counts
from .core import KeypointSet, StreamConfig
from .errors import DegenerateBox, NonFinite, ShapeMismatch


def _coords(k) -> np.ndarray:
    return k.coords if isinstance(k, KeypointSet) else np.asarray(k, dtype=np.float64)


def bbox_diagonal(points) -> float:
    p = _coords(points)
    ext = p.max(axis=0) - p.min(axis=0)
    return float(np.hypot(ext[0], ext[1]))


def nme(pred, gt) -> float:
    """Mean point-to-point distance over the ground-truth bounding-box diagonal, times 100."""
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 2 or p.shape[0] == 0:
        raise ShapeMismatch(f"need two equal (n, 2) point sets, got {p.shape} and {g.shape}")
    if not (np.isfinite(p).all() and np.isfinite(g).all()):
        raise NonFinite("keypoints must be finite")
    diag = bbox_diagonal(g)
    if not diag > 0:
        raise DegenerateBox("ground-truth keypoints have a zero-size bounding box")
    d = p - g
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])) / diag * 100.0)


def entropy_bits(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class ContextEntropy:
    field: str
    kind: str
    alphabet: int
    bits_per_symbol: float
    symbols_per_frame: int


@dataclass(frozen=True)
class EntropyReport:
    contexts: tuple
    keyframe_interval: int
    key_bits_per_frame: float
    delta_bits_per_frame: float
    bits_per_frame: float

    def as_dict(self) -> dict:
        return {
            "contexts": [c.__dict__ for c in self.contexts],
            "keyframe_interval": self.keyframe_interval,
            "key_bits_per_frame": self.key_bits_per_frame,
            "delta_bits_per_frame": self.delta_bits_per_frame,
            "bits_per_frame": self.bits_per_frame,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"{c.field}.{c.kind}.entropy={c.bits_per_symbol:.6f} {c.field}.{c.kind}.symbols={c.symbols_per_frame}"
            for c in self.contexts
        ]
        lines.append(f"key_bits_per_frame={self.key_bits_per_frame:.3f}")
        lines.append(f"delta_bits_per_frame={self.delta_bits_per_frame:.3f}")
        lines.append(f"bits_per_frame={self.bits_per_frame:.3f}")
        return "\n".join(lines) + "\n"


def entropy_report(prior: PriorModel, cfg: StreamConfig | None = None) -> EntropyReport:
    """Shannon entropy of every context and the per-frame lower bounds it implies.

    ``bits_per_frame`` amortizes one keyframe per ``keyframe_interval`` frames.
    """
    cfg = cfg or prior.cfg
    counts = field_counts(cfg)
    entries = []
    key = delta = 0.0
    for i, (field, kind) in enumerate(CONTEXTS):
        h = entropy_bits(prior.probabilities(i))
        n = counts[field]
        entries.append(ContextEntropy(field, kind, int(prior.sizes[i]), h, n))
        if kind == "key":
            key += h * n
        else:
            delta += h * n
    k = cfg.keyframe_interval
    return EntropyReport(tuple(entries), k, key, delta, (key + (k - 1) * delta) / k)
