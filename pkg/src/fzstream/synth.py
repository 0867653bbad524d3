"""Synthetic head-motion tracks, analytic stand-in providers and reference oracles.

Nothing here is learned.  Tracks come from a canonical front-facing layout
squeezed horizontally by ``cos(yaw)`` (with per-point depth parallax), which is
enough to exercise the samplers, the codec and the warp/fuse pipeline.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    FeatureMap,
    FlowField,
    KeypointSet,
    MotionPayload,
    PoseTrack,
    ReferencePose,
    ScalarMap,
    StreamConfig,
    TrackFrame,
)
from .errors import DegenerateGeometry, ShapeMismatch
from .frontal import SNAP, grid_coords, identity_flow

# yaw std of ~0.29 rad per video is typical of head-turning footage
DFDC_YAW_STD = 0.29


def _arc(n, cx, cy, rx, ry, a0, a1):
    t = np.linspace(a0, a1, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _landmark_layout() -> tuple[np.ndarray, np.ndarray]:
    """33 front-facing landmarks (jaw, brows, eyes, nose, mouth) and their depths."""
    jaw = _arc(9, 0.0, 0.05, 0.42, 0.45, 0.15 * math.pi, 0.85 * math.pi)
    brows = np.concatenate([_arc(3, -0.2, -0.22, 0.1, 0.04, 1.15 * math.pi, 1.85 * math.pi),
                            _arc(3, 0.2, -0.22, 0.1, 0.04, 1.15 * math.pi, 1.85 * math.pi)])
    eyes = np.concatenate([_arc(4, -0.2, -0.1, 0.07, 0.03, 0.0, 1.5 * math.pi),
                           _arc(4, 0.2, -0.1, 0.07, 0.03, 0.0, 1.5 * math.pi)])
    nose = np.array([[0.0, -0.05], [0.0, 0.05], [-0.05, 0.12], [0.05, 0.12]])
    mouth = _arc(6, 0.0, 0.3, 0.14, 0.05, 0.0, 2 * math.pi * 5 / 6)
    pts = np.concatenate([jaw, brows, eyes, nose, mouth])
    depth = np.concatenate([
        np.full(9, -0.05), np.full(6, 0.06), np.full(8, 0.05),
        [0.12, 0.2, 0.12, 0.12], np.full(6, 0.08),
    ])
    return pts, depth


def canonical_layout(cfg: StreamConfig) -> tuple[np.ndarray, np.ndarray]:
    """Front-facing keypoints for ``cfg`` (landmarks, then learned keypoints) and per-point depth."""
    pts, depth = _landmark_layout()
    reps = -(-cfg.n_sup // len(pts)) if cfg.n_sup else 0
    sup = np.tile(pts, (reps, 1))[: cfg.n_sup]
    sup_depth = np.tile(depth, reps)[: cfg.n_sup]
    k = np.arange(cfg.n_unsup)
    ang = 2 * math.pi * k / max(cfg.n_unsup, 1) + 0.3
    rad = 0.18 + 0.08 * (k % 2)
    unsup = np.stack([rad * np.cos(ang), 0.05 + rad * np.sin(ang)], axis=1)
    unsup_depth = 0.05 + 0.03 * np.cos(ang)
    return np.concatenate([sup, unsup]), np.concatenate([sup_depth, unsup_depth])


def front_reference(cfg: StreamConfig) -> ReferencePose:
    coords, _ = canonical_layout(cfg)
    jac = np.tile(np.eye(2), (cfg.n_unsup, 1, 1)) if cfg.with_jacobians else None
    return ReferencePose(KeypointSet.make(coords, jac))


def _base_jacobians(n: int) -> np.ndarray:
    k = np.arange(n)
    th = 0.25 * np.sin(1.7 * k + 0.4)
    s = 1.0 + 0.15 * np.cos(2.3 * k)
    c, si = np.cos(th), np.sin(th)
    return np.stack([np.stack([s * c, -si], -1), np.stack([si, s * c], -1)], axis=1)


def gen_track(
    frames: int,
    yaw_amplitude: float = DFDC_YAW_STD * math.sqrt(2.0),
    noise: float = 2e-4,
    seed: int = 0,
    cfg: StreamConfig | None = None,
) -> PoseTrack:
    """Smooth talking-head track with a sinusoidal yaw sweep.

    ``yaw_amplitude`` is the sweep amplitude in radians (the default gives a
    yaw std of about 0.29); head translation and scale drift are scaled with it.  ``noise`` is the std of white noise added to the
    keypoint coordinates and Jacobian entries.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    cfg = cfg or StreamConfig()
    rng = np.random.default_rng(seed)
    t = np.arange(frames, dtype=np.float64)

    f_yaw = rng.uniform(1 / 160, 1 / 90)
    yaw = yaw_amplitude * np.sin(2 * math.pi * f_yaw * t + rng.uniform(0, 2 * math.pi))
    # translation and scale drift scale with the yaw amplitude, so a zero
    # amplitude gives a static head
    motion = yaw_amplitude / (DFDC_YAW_STD * math.sqrt(2.0))
    tx = 0.04 * motion * np.sin(2 * math.pi * t * rng.uniform(1 / 400, 1 / 250) + rng.uniform(0, 2 * math.pi))
    ty = 0.02 * motion * np.sin(2 * math.pi * t * rng.uniform(1 / 400, 1 / 250) + rng.uniform(0, 2 * math.pi))
    scale = 1.0 + 0.03 * motion * np.sin(2 * math.pi * t * rng.uniform(1 / 500, 1 / 300) + rng.uniform(0, 2 * math.pi))

    base, depth = canonical_layout(cfg)
    cos_y, sin_y = np.cos(yaw), np.sin(yaw)
    xs = scale[:, None] * (base[None, :, 0] * cos_y[:, None] + depth[None, :] * sin_y[:, None]) + tx[:, None]
    ys = scale[:, None] * base[None, :, 1] + ty[:, None]
    coords = np.stack([xs, ys], axis=-1)
    if noise > 0:
        coords = coords + rng.normal(0.0, noise, coords.shape)

    jac = None
    if cfg.with_jacobians:
        j0 = _base_jacobians(cfg.n_unsup)
        squeeze = np.ones((frames, 1, 2, 1))
        squeeze[:, 0, 0, 0] = cos_y
        jac = (squeeze * scale[:, None, None, None]) * j0[None]
        if noise > 0:
            jac = jac + rng.normal(0.0, noise, jac.shape)

    expr = np.zeros((frames, cfg.M))
    if cfg.M:
        amp = rng.uniform(0.05, 0.25, cfg.M)
        freq = rng.uniform(1 / 300, 1 / 120, cfg.M)
        phase = rng.uniform(0, 2 * math.pi, cfg.M)
        expr = amp[None] * np.sin(2 * math.pi * freq[None] * t[:, None] + phase[None])

    blink = np.ones(frames, dtype=bool)
    start = int(rng.integers(5, 40))
    while start < frames:
        blink[start : start + 3] = False
        start += int(rng.integers(45, 90))

    out = []
    for i in range(frames):
        p = MotionPayload.from_absolute(
            coords[i], None if jac is None else jac[i], expr[i], frame_index=i
        )
        out.append(TrackFrame(i, float(yaw[i]), bool(blink[i]), p))
    return PoseTrack(cfg, tuple(out))


def gen_tracks(n: int, frames: int, seed: int = 0, cfg: StreamConfig | None = None, **kw) -> list[PoseTrack]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [gen_track(frames, seed=int(s), cfg=cfg, **kw) for s in seeds]


# stand-in providers


def _fit_affine(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares ``A`` (3x2) with ``[dst, 1] @ A ~= src``, plus the RMS residual."""
    if src.shape != dst.shape:
        raise ShapeMismatch(f"keypoint sets differ in shape: {src.shape} vs {dst.shape}")
    if src.shape[0] < 3:
        raise DegenerateGeometry("affine fit needs at least three keypoints")
    centred = dst - dst.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("keypoints are collinear")
    design = np.column_stack([dst, np.ones(len(dst))])
    a, *_ = np.linalg.lstsq(design, src, rcond=None)
    resid = design @ a - src
    return a, float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


def _rasterize_affine(a: np.ndarray, grid: tuple[int, int]) -> FlowField:
    ys, xs = grid_coords(*grid)
    gx, gy = np.meshgrid(xs, ys)
    flow = np.empty(grid + (2,))
    flow[..., 0] = a[0, 0] * gx + a[1, 0] * gy + a[2, 0]
    flow[..., 1] = a[0, 1] * gx + a[1, 1] * gy + a[2, 1]
    return FlowField(flow)


def affine_flow_provider(src: KeypointSet, dst: KeypointSet, grid: tuple[int, int] = (32, 32)) -> tuple[FlowField, ScalarMap]:
    """Backward-warp flow from a least-squares affine fit of ``dst -> src``.

    The confidence map is the negative RMS fit residual, constant over the grid.
    Jacobians are ignored.
    """
    if src.coords.shape == dst.coords.shape and np.array_equal(src.coords, dst.coords):
        _fit_affine(src.coords, dst.coords)  # still reject degenerate layouts
        return identity_flow(*grid), ScalarMap(np.zeros(grid))
    a, resid = _fit_affine(src.coords, dst.coords)
    return _rasterize_affine(a, grid), ScalarMap(np.full(grid, -resid))


def affine_motion_provider(src: KeypointSet, dst: KeypointSet, grid: tuple[int, int] = (32, 32)) -> tuple[FlowField, ScalarMap]:
    """Like :func:`affine_flow_provider` but returns an occlusion mask ``exp(-residual)`` in (0, 1]."""
    flow, conf = affine_flow_provider(src, dst, grid)
    return flow, ScalarMap(np.exp(conf.data))


def stub_encoder(keypoints: KeypointSet, channels: int = 32, grid: tuple[int, int] = (32, 32), sigma: float = 0.1) -> FeatureMap:
    """Channel ``c`` is a unit Gaussian splat centred on keypoint ``c mod n_kp``."""
    pts = keypoints.coords[np.arange(channels) % len(keypoints)]
    ys, xs = grid_coords(*grid)
    dx = xs[None, None, :] - pts[:, 0, None, None]
    dy = ys[None, :, None] - pts[:, 1, None, None]
    return FeatureMap(np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)))


def track_encoder(track: PoseTrack, channels: int = 32, grid: tuple[int, int] | None = None, payloads=None):
    """Encoder provider mapping a frame index of ``track`` to its stub feature map.

    ``payloads`` (frame_index -> MotionPayload) overrides the track's own
    payloads, e.g. to encode receiver-side dequantized keypoints.
    """
    grid = grid or track.cfg.grid
    lookup = payloads or {f.frame_index: f.payload for f in track}

    def provider(frame_id):
        return stub_encoder(lookup[frame_id].absolute(), channels, grid)

    return provider


def flow_provider(grid: tuple[int, int]):
    return lambda src, dst: affine_flow_provider(src, dst, grid)


def motion_provider(grid: tuple[int, int]):
    return lambda src, dst: affine_motion_provider(src, dst, grid)


# oracle


def brute_force_bilinear(fm: FeatureMap, flow: FlowField) -> FeatureMap:
    """Textbook four-neighbour bilinear interpolation with per-pixel Python loops.

    Texels outside the grid read as zero.  Kept deliberately naive: it is the
    reference the vectorized sampler is checked against.
    """
    data = fm.data
    c, h, w = data.shape
    if flow.spatial != (h, w):
        raise ShapeMismatch(f"flow grid {flow.spatial} does not match feature grid {(h, w)}")
    fl = flow.data.tolist()
    src = data.tolist()
    out = np.zeros((c, h, w))

    def to_pix(v, size):
        p = (v + 1.0) * (size - 1) / 2.0
        r = math.floor(p + 0.5)
        if abs(p - r) <= SNAP:
            p = float(r)
        return p

    def texel(ch, yy, xx):
        if 0 <= yy < h and 0 <= xx < w:
            return src[ch][yy][xx]
        return 0.0

    for u in range(h):
        for v in range(w):
            px = to_pix(fl[u][v][0], w)
            py = to_pix(fl[u][v][1], h)
            x0 = math.floor(px)
            y0 = math.floor(py)
            wx1 = px - x0
            wx0 = 1.0 - wx1
            wy1 = py - y0
            wy0 = 1.0 - wy1
            for ch in range(c):
                out[ch, u, v] = (
                    texel(ch, y0, x0) * (wy0 * wx0)
                    + texel(ch, y0, x0 + 1) * (wy0 * wx1)
                    + texel(ch, y0 + 1, x0) * (wy1 * wx0)
                    + texel(ch, y0 + 1, x0 + 1) * (wy1 * wx1)
                )
    return FeatureMap(out)


def enumerate_triplets(yaws, min_span: float = 0.3) -> list[tuple[int, int, int]]:
    """Every (A, C, B) with yaw_A > yaw_B > yaw_C and yaw_A - yaw_C > ``min_span``, by exhaustive loops."""
    y = [float(v) for v in yaws]
    n = len(y)
    return [
        (a, c, b)
        for a in range(n)
        for c in range(n)
        for b in range(n)
        if y[a] > y[b] > y[c] and y[a] - y[c] > min_span
    ]


def enumerate_quads(yaws, min_span: float = 0.3, near_tol: float = 0.1) -> list[tuple[int, int, int, int]]:
    """Every (A, C, B1, B2) of distinct frames meeting the quadruplet constraints, by exhaustive loops."""
    y = [float(v) for v in yaws]
    n = len(y)
    out = []
    for a, c, b1 in enumerate_triplets(y, min_span):
        for b2 in range(n):
            if b2 not in (a, c, b1) and abs(y[a] - y[b2]) < near_tol:
                out.append((a, c, b1, b2))
    return out
