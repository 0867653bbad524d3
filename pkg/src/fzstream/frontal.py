"""Warp-and-fuse kernels for multi-source face reenactment.

Neural networks are abstracted as providers:

* ``EncoderProvider``: ``frame_id -> FeatureMap``
* ``FlowProvider``: ``(source KeypointSet, target KeypointSet) -> (FlowField, ScalarMap)``
* ``DecoderProvider``: ``(FeatureMap, conditioning FeatureMap) -> FeatureMap``

Everything else here is exact numerics.  Providers are called from a single
thread, one call at a time.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Callable, Hashable, Protocol, Sequence

import numpy as np

from .core import FeatureMap, FlowField, KeypointSet, ReferencePose, ScalarMap
from .errors import EmptyInput, RangeViolation, ShapeMismatch

DEFAULT_SIGMA = 0.1

# Sampling positions this close (in texel units) to a texel centre read that
# texel exactly; absorbs the rounding of the normalized <-> pixel mapping.
SNAP = 1e-9


class EncoderProvider(Protocol):
    def __call__(self, frame_id: Hashable) -> FeatureMap: ...


class FlowProvider(Protocol):
    def __call__(self, source: KeypointSet, target: KeypointSet) -> tuple[FlowField, ScalarMap]: ...


class DecoderProvider(Protocol):
    def __call__(self, features: FeatureMap, conditioning: FeatureMap) -> FeatureMap: ...


def grid_coords(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized texel-centre coordinates ``(ys, xs)``; corners sit on -1 and +1."""
    ys = -1.0 + 2.0 * np.arange(h) / (h - 1)
    xs = -1.0 + 2.0 * np.arange(w) / (w - 1)
    return ys, xs


def identity_flow(h: int, w: int) -> FlowField:
    ys, xs = grid_coords(h, w)
    data = np.empty((h, w, 2))
    data[..., 0] = xs[None, :]
    data[..., 1] = ys[:, None]
    return FlowField(data)


def to_pixel(coord: np.ndarray, size: int) -> np.ndarray:
    """Map normalized coordinates to (snapped) texel coordinates."""
    pix = (coord + 1.0) * (size - 1) / 2.0
    nearest = np.floor(pix + 0.5)
    pix = np.where(np.abs(pix - nearest) <= SNAP, nearest, pix)
    # far-out samples read zero either way; clipping only keeps the int cast sane
    return np.clip(pix, -2.0, size + 1.0)


def _gaussians(points: np.ndarray, ys: np.ndarray, xs: np.ndarray, sigma: float) -> np.ndarray:
    dx = xs[None, None, :] - points[:, 0, None, None]
    dy = ys[None, :, None] - points[:, 1, None, None]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def keypoint_heatmaps(src: KeypointSet, dst: KeypointSet, grid: tuple[int, int], sigma: float = DEFAULT_SIGMA) -> FeatureMap:
    """Difference-of-Gaussians displacement maps: channel k is G(dst_k) - G(src_k)."""
    if src.coords.shape != dst.coords.shape:
        raise ShapeMismatch(f"keypoint sets differ in shape: {src.coords.shape} vs {dst.coords.shape}")
    if not sigma > 0:
        raise RangeViolation("sigma must be positive")
    ys, xs = grid_coords(*grid)
    return FeatureMap(_gaussians(dst.coords, ys, xs, sigma) - _gaussians(src.coords, ys, xs, sigma))


def grid_sample(fm: FeatureMap, flow: FlowField) -> FeatureMap:
    """Bilinear resampling of ``fm`` at the flow's normalized locations.

    Texels outside the grid read as zero, so samples beyond [-1, 1] fade to
    zero within one texel and are exactly zero further out.
    """
    c, h, w = fm.data.shape
    if flow.spatial != (h, w):
        raise ShapeMismatch(f"flow grid {flow.spatial} does not match feature grid {(h, w)}")
    ix = to_pixel(flow.data[..., 0], w)
    iy = to_pixel(flow.data[..., 1], h)
    fx0 = np.floor(ix)
    fy0 = np.floor(iy)
    wx1 = ix - fx0
    wx0 = 1.0 - wx1
    wy1 = iy - fy0
    wy0 = 1.0 - wy1
    x0 = fx0.astype(np.intp)
    y0 = fy0.astype(np.intp)
    x1 = x0 + 1
    y1 = y0 + 1

    data = fm.data

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = data[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(ok[None], vals, 0.0)

    out = (
        tap(y0, x0) * (wy0 * wx0)
        + tap(y0, x1) * (wy0 * wx1)
        + tap(y1, x0) * (wy1 * wx0)
        + tap(y1, x1) * (wy1 * wx1)
    )
    return FeatureMap(out)


def apply_occlusion(fm: FeatureMap, mask: ScalarMap) -> FeatureMap:
    if mask.spatial != fm.spatial:
        raise ShapeMismatch(f"mask grid {mask.spatial} does not match feature grid {fm.spatial}")
    m = mask.data
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise RangeViolation("occlusion mask must lie in [0, 1]")
    return FeatureMap(fm.data * m[None, :, :])


def fuse(warped: Sequence[FeatureMap], confidences: Sequence[ScalarMap]) -> tuple[FeatureMap, list[ScalarMap]]:
    """Softmax-weighted sum of warped maps; softmax runs over sources at each pixel.

    Returns the fused map and the per-source weight maps.  Per-pixel sums are
    taken over sorted terms, which makes the result bit-identical under any
    permutation of the sources.
    """
    if len(warped) == 0:
        raise EmptyInput("fuse needs at least one source")
    if len(warped) != len(confidences):
        raise ShapeMismatch(f"{len(warped)} feature maps but {len(confidences)} confidence maps")
    shape = warped[0].data.shape
    for fm in warped:
        if fm.data.shape != shape:
            raise ShapeMismatch("warped feature maps differ in shape")
    for cm in confidences:
        if cm.spatial != shape[1:]:
            raise ShapeMismatch("confidence map grid does not match feature grid")

    logits = np.stack([cm.data for cm in confidences])
    shifted = np.exp(logits - logits.max(axis=0))
    denom = np.sort(shifted, axis=0).sum(axis=0)
    weights = shifted / denom
    feats = np.stack([fm.data for fm in warped])
    terms = weights[:, None, :, :] * feats
    fused = np.sort(terms, axis=0).sum(axis=0)
    return FeatureMap(fused), [ScalarMap(wm) for wm in weights]


def conditioning_maps(e, grid: tuple[int, int]) -> FeatureMap:
    """One constant channel per expression value."""
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    h, w = grid
    return FeatureMap(np.broadcast_to(e[:, None, None], (e.size, h, w)).copy())


def expression_loss(fe_pred, fe_true, fl_pred, fl_true, gamma: float) -> float:
    """``gamma * (|fE_pred - fE_true|_1 + |fL_pred - fL_true|_1)`` on caller-supplied features."""
    fe_pred, fe_true, fl_pred, fl_true = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (fe_pred, fe_true, fl_pred, fl_true))
    if fe_pred.shape != fe_true.shape or fl_pred.shape != fl_true.shape:
        raise ShapeMismatch("paired feature vectors must have equal length")
    if gamma < 0:
        raise RangeViolation("gamma must be non-negative")
    if gamma == 0:
        return 0.0
    return float(gamma * (np.abs(fe_pred - fe_true).sum() + np.abs(fl_pred - fl_true).sum()))


def frontalize(
    sources: Sequence[tuple[Hashable, KeypointSet]],
    p_r: ReferencePose,
    enc: EncoderProvider,
    fr: FlowProvider,
    return_weights: bool = False,
):
    """Encode every source, warp it into the reference pose and fuse the results."""
    if len(sources) == 0:
        raise EmptyInput("frontalize needs at least one source")
    warped, confs = [], []
    for frame_id, kps in sources:
        feats = enc(frame_id)
        flow, conf = fr(kps, p_r.keypoints)
        warped.append(grid_sample(feats, flow))
        confs.append(conf)
    fused, weights = fuse(warped, confs)
    if return_weights:
        return fused, weights
    return fused


def animate(
    fused: FeatureMap,
    p_r: ReferencePose,
    p_d: KeypointSet,
    dm: FlowProvider,
    dec: DecoderProvider,
    e,
) -> FeatureMap:
    """Move the fused reference embedding to the driving pose and decode it."""
    flow, occlusion = dm(p_r.keypoints, p_d)
    moved = apply_occlusion(grid_sample(fused, flow), occlusion)
    return dec(moved, conditioning_maps(e, fused.spatial))


# FZFM1 dumps: magic, u32 ndim, u32 dims..., float32 data (row-major, little-endian)

FM_MAGIC = b"FZFM1"


def write_array(fh: BinaryIO, arr) -> None:
    arr = np.asarray(arr, dtype="<f4")
    fh.write(FM_MAGIC)
    fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    fh.write(np.ascontiguousarray(arr).tobytes())


def read_array(fh: BinaryIO) -> np.ndarray | None:
    """Next array from ``fh``, or ``None`` at a clean end of file."""
    magic = fh.read(len(FM_MAGIC))
    if not magic:
        return None
    if magic != FM_MAGIC:
        raise ValueError("not an FZFM1 record")
    (ndim,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(dims)) if dims else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated FZFM1 record")
    return np.frombuffer(raw, dtype="<f4").reshape(dims)


def dump_arrays(arrays: Sequence) -> bytes:
    buf = io.BytesIO()
    for a in arrays:
        write_array(buf, a)
    return buf.getvalue()


def load_arrays(data: bytes) -> list[np.ndarray]:
    buf = io.BytesIO(data)
    out = []
    while (a := read_array(buf)) is not None:
        out.append(a)
    return out


def identity_flow_provider(grid: tuple[int, int]) -> Callable:
    """Flow provider that leaves features in place; its scalar map is all ones, so it
    serves both as a (flat) confidence and as a fully visible occlusion mask."""
    flow = identity_flow(*grid)
    conf = ScalarMap(np.ones(grid))

    def provider(source: KeypointSet, target: KeypointSet):
        return flow, conf

    return provider


def identity_decoder(features: FeatureMap, conditioning: FeatureMap) -> FeatureMap:
    return features


def concat_decoder(features: FeatureMap, conditioning: FeatureMap) -> FeatureMap:
    """Stacks the conditioning channels after the features (what the real decoder consumes)."""
    return FeatureMap(np.concatenate([features.data, conditioning.data], axis=0))
