"""Uniform scalar quantizers and the flat per-frame value layout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..core import KeypointSet, MotionPayload, StreamConfig, _seal, validate_payload
from ..errors import RangeViolation, ShapeMismatch

FIELDS = ("mean_pos", "sup_kp", "unsup_kp", "jacobian", "expression")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    bits: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.name not in FIELDS:
            raise ValueError(f"unknown field {self.name!r}")
        if not 1 <= self.bits <= 24:
            raise RangeViolation(f"bits must be in [1, 24], got {self.bits}")
        if not self.lo < self.hi:
            raise RangeViolation("need lo < hi")

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.max_code

    @property
    def key_alphabet(self) -> int:
        return self.max_code + 1

    @property
    def delta_alphabet(self) -> int:
        return 2 * self.max_code + 1


DEFAULT_SPECS: dict[str, FieldSpec] = {
    # mean position: 12 bits, like the finest keypoint field
    "mean_pos": FieldSpec("mean_pos", 12, -1.0, 1.0),
    "sup_kp": FieldSpec("sup_kp", 8, -1.0, 1.0),
    "unsup_kp": FieldSpec("unsup_kp", 12, -1.0, 1.0),
    "jacobian": FieldSpec("jacobian", 16, -15.0, 15.0),
    "expression": FieldSpec("expression", 10, -1.0, 1.0),
}


def quantize_array(values, lo, hi, max_code) -> np.ndarray:
    """Vectorized quantizer; the fused frame kernel repeats exactly this arithmetic."""
    v = np.minimum(np.maximum(values, lo), hi)
    return np.floor((v - lo) * max_code / (hi - lo) + 0.5).astype(np.int64)


def dequantize_array(codes, lo, hi, max_code) -> np.ndarray:
    return lo + codes * (hi - lo) / max_code


def quantize(value: float, spec: FieldSpec) -> int:
    """Clamp to ``[lo, hi]`` and map to the nearest of ``2**bits`` evenly spaced levels."""
    return int(quantize_array(np.float64(value), spec.lo, spec.hi, float(spec.max_code)))


def dequantize(code: int, spec: FieldSpec) -> float:
    if not 0 <= code <= spec.max_code:
        raise RangeViolation(f"code {code} outside [0, {spec.max_code}] for {spec.name}")
    return float(dequantize_array(np.float64(code), spec.lo, spec.hi, float(spec.max_code)))


def raw_bits(cfg: StreamConfig, specs: Mapping[str, FieldSpec] = DEFAULT_SPECS) -> int:
    """Uncoded size of one frame: every value at its quantizer width."""
    return sum(specs[name].bits * n for name, n in field_counts(cfg).items())


def field_counts(cfg: StreamConfig) -> dict[str, int]:
    return {
        "mean_pos": 2,
        "sup_kp": 2 * cfg.n_sup,
        "unsup_kp": 2 * cfg.n_unsup,
        "jacobian": 4 * cfg.n_unsup if cfg.with_jacobians else 0,
        "expression": cfg.M,
    }


class Layout:
    """Flat ordering of one frame's scalars: mean, landmarks, keypoints, Jacobians, expression.

    Holds the per-position quantizer parameters and coder contexts so the hot
    path works on plain arrays.
    """

    def __init__(self, cfg: StreamConfig, specs: Mapping[str, FieldSpec] = DEFAULT_SPECS):
        self.cfg = cfg
        self.specs = dict(specs)
        counts = field_counts(cfg)
        self.counts = counts
        self.slices: dict[str, slice] = {}
        field_id, start = [], 0
        for i, name in enumerate(FIELDS):
            n = counts[name]
            self.slices[name] = slice(start, start + n)
            field_id.extend([i] * n)
            start += n
        self.size = start
        self.field_id = np.array(field_id, dtype=np.int64)
        spec_list = [self.specs[name] for name in FIELDS]
        self.lo = np.array([spec_list[f].lo for f in field_id], dtype=np.float64)
        self.hi = np.array([spec_list[f].hi for f in field_id], dtype=np.float64)
        self.max_code = np.array([spec_list[f].max_code for f in field_id], dtype=np.int64)
        self.max_code_f = self.max_code.astype(np.float64)
        self.key_ctx = 2 * self.field_id
        self.delta_ctx = 2 * self.field_id + 1
        self.fpar = np.ascontiguousarray(np.stack([self.lo, self.hi, self.max_code_f]))
        self.ipar = np.ascontiguousarray(np.stack([self.max_code, self.key_ctx, self.delta_ctx]))
        for arr in (self.field_id, self.lo, self.hi, self.max_code, self.max_code_f, self.key_ctx, self.delta_ctx, self.fpar, self.ipar):
            arr.flags.writeable = False

    def flatten(self, payload: MotionPayload) -> np.ndarray:
        """Concatenate the payload's scalars, checking shapes and ranges."""
        values = self.flatten_unchecked(payload)
        if not (np.isfinite(values).all() and (values >= self.lo).all() and (values <= self.hi).all()):
            self.raise_invalid(payload)
        return values

    def raise_invalid(self, payload: MotionPayload):
        validate_payload(payload, self.cfg)
        raise RangeViolation("payload value outside its quantizer range")

    def flatten_unchecked(self, payload: MotionPayload) -> np.ndarray:
        """Concatenate the payload's scalars; shapes are checked, values are not."""
        cfg = self.cfg
        coords = payload.offsets.coords
        jac = payload.offsets.jacobians
        if (
            coords.shape != (cfg.n_kp, 2)
            or payload.expression.shape != (cfg.M,)
            or (jac is None) == cfg.with_jacobians
        ):
            validate_payload(payload, cfg)
            raise ShapeMismatch("payload does not match config")  # pragma: no cover
        parts = [payload.mean_pos, coords.ravel()]
        if jac is not None:
            parts.append(jac.ravel())
        parts.append(payload.expression)
        values = np.concatenate(parts)
        if values.shape[0] != self.size:
            validate_payload(payload, cfg)
            raise ShapeMismatch("payload does not match config")  # pragma: no cover
        return values

    def unflatten(self, values: np.ndarray, frame_index: int) -> MotionPayload:
        cfg = self.cfg
        s = self.slices
        _seal(values)
        coords = values[s["mean_pos"].stop : s["unsup_kp"].stop].reshape(cfg.n_kp, 2)
        jac = values[s["jacobian"]].reshape(cfg.n_unsup, 2, 2) if cfg.with_jacobians else None
        return MotionPayload(
            mean_pos=values[s["mean_pos"]],
            offsets=KeypointSet(coords, jac),
            expression=values[s["expression"]],
            frame_index=frame_index,
        )

    def quantize(self, values: np.ndarray) -> np.ndarray:
        return quantize_array(values, self.lo, self.hi, self.max_code_f)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return dequantize_array(codes, self.lo, self.hi, self.max_code_f)

    def split(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {name: flat[self.slices[name]] for name in FIELDS}
