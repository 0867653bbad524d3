"""Domain types shared by the codec and the warp/fuse kernels.

Coordinates are normalized: the image square maps to [-1, 1]^2 with the
corner texels centred on -1 and +1.  ``x`` runs along the width, ``y`` along
the height.  Every value object here is immutable once built (its arrays are
flagged read-only), so instances can be handed to other threads freely.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyInput, NonFinite, RangeViolation, ShapeMismatch

COORD_LIMIT = 1.0
JACOBIAN_LIMIT = 15.0
EXPRESSION_LIMIT = 1.0


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _seal(arr: np.ndarray) -> np.ndarray:
    # takes ownership of an array we just built; no copy
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class StreamConfig:
    """Negotiated session parameters.

    Defaults correspond to the full Sup+Unsup+Expr model: 33 tracked
    landmarks, 10 learned keypoints with Jacobians, a 16-value expression code,
    32x32 kernel grids and a 15 fps nominal rate.
    """

    n_sup: int = 33
    n_unsup: int = 10
    with_jacobians: bool = True
    M: int = 16
    grid_h: int = 32
    grid_w: int = 32
    keyframe_interval: int = 100
    fps: float = 15.0

    def __post_init__(self):
        if self.n_sup < 0 or self.n_unsup < 0:
            raise RangeViolation("keypoint counts must be non-negative")
        if self.n_sup + self.n_unsup < 1:
            raise RangeViolation("at least one keypoint is required")
        if self.M < 0:
            raise RangeViolation("expression length must be non-negative")
        if self.grid_h < 2 or self.grid_w < 2:
            raise RangeViolation("grid dimensions must be at least 2")
        if self.keyframe_interval < 1:
            raise RangeViolation("keyframe_interval must be >= 1")
        if not (self.fps > 0 and np.isfinite(self.fps)):
            raise RangeViolation("fps must be positive")

    @property
    def n_kp(self) -> int:
        return self.n_sup + self.n_unsup

    @property
    def grid(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    def replace(self, **changes) -> "StreamConfig":
        return dataclasses.replace(self, **changes)


# The four model variants whose frame sizes are compared in the bandwidth table.
PRESETS: dict[str, StreamConfig] = {
    "fom": StreamConfig(n_sup=0, n_unsup=10, with_jacobians=True, M=0),
    "sup": StreamConfig(n_sup=33, n_unsup=0, with_jacobians=False, M=0),
    "sup_unsup": StreamConfig(n_sup=33, n_unsup=10, with_jacobians=True, M=0),
    "sup_unsup_expr": StreamConfig(n_sup=33, n_unsup=10, with_jacobians=True, M=16),
}


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Keypoint coordinates, supervised landmarks first, plus optional 2x2 Jacobians
    (one per unsupervised keypoint)."""

    coords: np.ndarray
    jacobians: np.ndarray | None = None

    @classmethod
    def make(cls, coords, jacobians=None) -> "KeypointSet":
        coords = _frozen(coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ShapeMismatch(f"coords must have shape (n, 2), got {coords.shape}")
        if jacobians is not None:
            jacobians = _frozen(jacobians)
            if jacobians.ndim != 3 or jacobians.shape[1:] != (2, 2):
                raise ShapeMismatch(f"jacobians must have shape (k, 2, 2), got {jacobians.shape}")
        return cls(coords, jacobians)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeypointSet):
            return NotImplemented
        if (self.jacobians is None) != (other.jacobians is None):
            return False
        if not np.array_equal(self.coords, other.coords):
            return False
        return self.jacobians is None or np.array_equal(self.jacobians, other.jacobians)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MotionPayload:
    """One frame's transmissible state.

    ``offsets`` holds the keypoints relative to ``mean_pos``.  The plain
    constructor trusts its inputs; use :meth:`from_absolute` to build a payload
    from tracker output (it computes the mean and clamps out-of-range values).
    ``clamped`` counts the scalars that were saturated during construction.
    """

    mean_pos: np.ndarray
    offsets: KeypointSet
    expression: np.ndarray
    frame_index: int = 0
    clamped: int = 0

    @classmethod
    def from_absolute(
        cls,
        coords,
        jacobians=None,
        expression=(),
        frame_index: int = 0,
        expression_range: tuple[float, float] = (-1.0, 1.0),
    ) -> "MotionPayload":
        coords = np.array(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] == 0:
            raise ShapeMismatch(f"coords must have shape (n>=1, 2), got {coords.shape}")
        expression = np.array(expression, dtype=np.float64).reshape(-1)
        lo, hi = expression_range
        if (lo, hi) != (-1.0, 1.0):
            expression = remap_expression(expression, lo, hi)
        _check_finite(coords, "coords")
        _check_finite(expression, "expression")

        mean = coords.mean(axis=0)
        offsets = coords - mean
        clamped = 0
        clamped += _count_outside(mean, COORD_LIMIT)
        clamped += _count_outside(offsets, COORD_LIMIT)
        clamped += _count_outside(expression, EXPRESSION_LIMIT)
        mean = np.clip(mean, -COORD_LIMIT, COORD_LIMIT)
        offsets = np.clip(offsets, -COORD_LIMIT, COORD_LIMIT)
        expression = np.clip(expression, -EXPRESSION_LIMIT, EXPRESSION_LIMIT)

        jac = None
        if jacobians is not None:
            jac = np.array(jacobians, dtype=np.float64)
            if jac.ndim != 3 or jac.shape[1:] != (2, 2):
                raise ShapeMismatch(f"jacobians must have shape (k, 2, 2), got {jac.shape}")
            _check_finite(jac, "jacobians")
            clamped += _count_outside(jac, JACOBIAN_LIMIT)
            jac = _seal(np.clip(jac, -JACOBIAN_LIMIT, JACOBIAN_LIMIT))

        return cls(
            mean_pos=_seal(mean),
            offsets=KeypointSet(_seal(offsets), jac),
            expression=_seal(expression),
            frame_index=int(frame_index),
            clamped=clamped,
        )

    def absolute_coords(self) -> np.ndarray:
        return self.offsets.coords + self.mean_pos

    def absolute(self) -> KeypointSet:
        return KeypointSet(_seal(self.absolute_coords()), self.offsets.jacobians)

    @property
    def jacobians(self) -> np.ndarray | None:
        return self.offsets.jacobians

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionPayload):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and np.array_equal(self.mean_pos, other.mean_pos)
            and self.offsets == other.offsets
            and np.array_equal(self.expression, other.expression)
        )

    __hash__ = None


def remap_expression(values, lo: float, hi: float) -> np.ndarray:
    """Affinely map expression values from ``[lo, hi]`` onto ``[-1, 1]``.

    Providers with a sigmoid head emit codes in [0, 1]; the codec range is [-1, 1].
    """
    if not hi > lo:
        raise RangeViolation("expression range must satisfy lo < hi")
    values = np.asarray(values, dtype=np.float64)
    return (values - lo) * (2.0 / (hi - lo)) - 1.0


def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{what} contains non-finite values")


def _count_outside(a: np.ndarray, limit: float) -> int:
    return int(np.count_nonzero(np.abs(a) > limit))


def validate_payload(payload: MotionPayload, cfg: StreamConfig) -> None:
    """Raise if ``payload`` breaks any shape, finiteness or range invariant under ``cfg``."""
    mean = np.asarray(payload.mean_pos)
    coords = np.asarray(payload.offsets.coords)
    jac = payload.offsets.jacobians
    expr = np.asarray(payload.expression)

    if mean.shape != (2,):
        raise ShapeMismatch(f"mean_pos must have shape (2,), got {mean.shape}")
    if coords.shape != (cfg.n_kp, 2):
        raise ShapeMismatch(f"expected {cfg.n_kp} keypoints, got array of shape {coords.shape}")
    if cfg.with_jacobians:
        if jac is None:
            raise ShapeMismatch("config requires Jacobians but payload has none")
        if np.shape(jac) != (cfg.n_unsup, 2, 2):
            raise ShapeMismatch(f"expected Jacobians of shape ({cfg.n_unsup}, 2, 2), got {np.shape(jac)}")
    elif jac is not None:
        raise ShapeMismatch("payload carries Jacobians but config has with_jacobians=False")
    if expr.shape != (cfg.M,):
        raise ShapeMismatch(f"expected expression of length {cfg.M}, got shape {expr.shape}")

    parts = [(mean, "mean_pos"), (coords, "offsets"), (expr, "expression")]
    if jac is not None:
        parts.append((np.asarray(jac), "jacobians"))
    for arr, name in parts:
        _check_finite(arr, name)

    if np.any(np.abs(mean) > COORD_LIMIT):
        raise RangeViolation("mean_pos outside [-1, 1]")
    if np.any(np.abs(coords) > COORD_LIMIT):
        raise RangeViolation("keypoint offset outside [-1, 1]")
    if jac is not None and np.any(np.abs(jac) > JACOBIAN_LIMIT):
        raise RangeViolation("Jacobian entry outside [-15, 15]")
    if np.any(np.abs(expr) > EXPRESSION_LIMIT):
        raise RangeViolation("expression value outside [-1, 1]")


# dense grids


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Real tensor of shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeMismatch(f"feature map must be 3-D, got shape {data.shape}")
        _check_finite(data, "feature map")
        if data.flags.writeable:
            data = data.copy() if data is self.data else data
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1:]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Sampling locations (not displacements), shape (height, width, 2), last axis (x, y)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ShapeMismatch(f"flow must have shape (h, w, 2), got {data.shape}")
        _check_finite(data, "flow")
        if data.flags.writeable:
            data = data.copy() if data is self.data else data
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class ScalarMap:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatch(f"scalar map must be 2-D, got shape {data.shape}")
        _check_finite(data, "scalar map")
        if data.flags.writeable:
            data = data.copy() if data is self.data else data
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ReferencePose:
    """Canonical keypoint layout every source is warped into."""

    keypoints: KeypointSet

    @classmethod
    def mean_layout(cls, sets: Sequence[KeypointSet]) -> "ReferencePose":
        """Average keypoint positions over ``sets`` (a front-facing layout for balanced tracks)."""
        if not sets:
            raise EmptyInput("need at least one keypoint set")
        coords = np.mean([s.coords for s in sets], axis=0)
        jac = None
        if sets[0].jacobians is not None:
            jac = np.mean([s.jacobians for s in sets], axis=0)
        return cls(KeypointSet.make(coords, jac))


def validate_keypoints(kps: KeypointSet, cfg: StreamConfig) -> None:
    if kps.coords.shape != (cfg.n_kp, 2):
        raise ShapeMismatch(f"expected {cfg.n_kp} keypoints, got {kps.coords.shape}")
    if cfg.with_jacobians:
        if kps.jacobians is None or kps.jacobians.shape != (cfg.n_unsup, 2, 2):
            raise ShapeMismatch("Jacobian shape does not match config")
    elif kps.jacobians is not None:
        raise ShapeMismatch("config has with_jacobians=False")


# tracks


@dataclass(frozen=True, eq=False)
class TrackFrame:
    frame_index: int
    yaw: float
    eyes_open: bool
    payload: MotionPayload


@dataclass(frozen=True, eq=False)
class PoseTrack:
    """Per-frame yaw, eye state and motion payload for one video."""

    cfg: StreamConfig
    frames: tuple[TrackFrame, ...] = field(default_factory=tuple)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        prev = None
        for fr in frames:
            if prev is not None and fr.frame_index <= prev:
                raise RangeViolation(f"frame_index must be strictly increasing (saw {fr.frame_index} after {prev})")
            if not np.isfinite(fr.yaw):
                raise NonFinite(f"yaw of frame {fr.frame_index} is not finite")
            prev = fr.frame_index

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[TrackFrame]:
        return iter(self.frames)

    def __getitem__(self, i) -> TrackFrame:
        return self.frames[i]

    @property
    def yaws(self) -> np.ndarray:
        return np.array([f.yaw for f in self.frames], dtype=np.float64)

    @property
    def eyes_open(self) -> np.ndarray:
        return np.array([f.eyes_open for f in self.frames], dtype=bool)

    @property
    def payloads(self) -> list[MotionPayload]:
        return [f.payload for f in self.frames]

    @classmethod
    def from_yaws(cls, yaws, eyes_open=None, cfg: StreamConfig | None = None) -> "PoseTrack":
        """Track with the given yaws and placeholder (centred) keypoints, mostly for samplers."""
        cfg = cfg or StreamConfig(n_sup=1, n_unsup=0, with_jacobians=False, M=0)
        yaws = list(yaws)
        if eyes_open is None:
            eyes_open = [True] * len(yaws)
        coords = np.zeros((cfg.n_kp, 2))
        jac = np.tile(np.eye(2), (cfg.n_unsup, 1, 1)) if cfg.with_jacobians else None
        frames = []
        for i, (yaw, eo) in enumerate(zip(yaws, eyes_open)):
            p = MotionPayload.from_absolute(coords, jac, np.zeros(cfg.M), frame_index=i)
            frames.append(TrackFrame(i, float(yaw), bool(eo), p))
        return cls(cfg, tuple(frames))
