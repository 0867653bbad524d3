"""Throughput measurements on a fixed synthetic workload."""

from __future__ import annotations

import time

import numpy as np

from .codec.frame import FrameCodec, ac_decode, ac_encode, train_prior
from .codec.prior import CONTEXTS
from .core import PRESETS, StreamConfig
from .frontal import grid_sample, identity_flow
from .synth import gen_tracks, stub_encoder


def _best_rate(fn, units: int, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return units / best


def run_bench(frames: int = 2000, repeats: int = 5, seed: int = 0, cfg: StreamConfig | None = None) -> dict:
    """Single-thread rates (best of ``repeats``) for the codec and the warp kernel.

    The workload depends only on ``frames``, ``seed`` and ``cfg``.
    """
    cfg = cfg or PRESETS["sup_unsup_expr"]
    train = gen_tracks(4, 500, seed=seed + 1, cfg=cfg)
    prior = train_prior([t.payloads for t in train], cfg)
    payloads = gen_tracks(1, frames, seed=seed, cfg=cfg)[0].payloads
    codec = FrameCodec(cfg, prior)

    def encode_all():
        st = codec.new_state()
        return [codec.encode(st, p) for p in payloads]

    records = encode_all()  # also warms up the compiled kernels

    def decode_all():
        st = codec.new_state()
        for r in records:
            codec.decode(st, r)

    def round_trip():
        tx, rx = codec.new_state(), codec.new_state()
        for p in payloads:
            codec.decode(rx, codec.encode(tx, p))

    decode_all()
    rate_rt = _best_rate(round_trip, frames, repeats)
    rate_enc = _best_rate(encode_all, frames, repeats)
    rate_dec = _best_rate(decode_all, frames, repeats)

    rng = np.random.default_rng(seed)
    n_sym = 100_000
    ctx = rng.integers(0, len(CONTEXTS), n_sym)
    sym = np.minimum(rng.geometric(0.3, n_sym) - 1, prior.sizes[ctx] - 1)
    blob = ac_encode(sym, ctx, prior)
    ac_decode(blob, ctx, prior)
    rate_ac = _best_rate(lambda: ac_decode(ac_encode(sym, ctx, prior), ctx, prior), n_sym, repeats)

    fm = stub_encoder(payloads[0].absolute(), 32, cfg.grid)
    flow = identity_flow(*cfg.grid)
    n_warp = 200
    rate_warp = _best_rate(lambda: [grid_sample(fm, flow) for _ in range(n_warp)], n_warp, repeats)

    total_bits = 8 * sum(len(r) for r in records)
    return {
        "frames": frames,
        "encode_decode_fps": rate_rt,
        "encode_fps": rate_enc,
        "decode_fps": rate_dec,
        "symbols_per_s": rate_ac,
        "grid_sample_per_s": rate_warp,
        "bits_per_frame": total_bits / frames,
    }
