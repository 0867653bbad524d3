"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from typing import Sequence

import numpy as np

from . import trackio
from .bench import run_bench
from .codec.frame import FrameCodec, train_prior
from .codec.prior import PriorModel
from .core import PRESETS, PoseTrack, TrackFrame
from .errors import ChannelClosed, ChecksumFailure, FzError, NoValidSample, ProtocolError
from .frontal import animate, concat_decoder, dump_arrays, frontalize
from .metrics import entropy_report
from .sampling import (
    MIN_SPAN,
    NEAR_TOL,
    ROTATION_THRESHOLD,
    Quad,
    filter_rotation_tracks,
    format_samples,
    relaxed_triplet,
    sample_quad,
    sample_triplet,
    select_sources,
)
from .synth import flow_provider, front_reference, gen_track, motion_provider, track_encoder
from .wire import (
    FileChannel,
    MemoryPipe,
    TcpChannel,
    bandwidth_report,
    iter_frames,
    open_receiver,
    open_sender,
    send_frame,
    tcp_accept,
    tcp_listener,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(report: dict, as_json: bool, out=None) -> None:
    out = out or sys.stdout
    if as_json:
        out.write(json.dumps(report, sort_keys=True) + "\n")
        return
    for k, v in report.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        elif isinstance(v, bool):
            v = str(v).lower()
        out.write(f"{k}={v}\n")


def _config(args, base):
    changes = {}
    if getattr(args, "keyframe_interval", None) is not None:
        changes["keyframe_interval"] = args.keyframe_interval
    if getattr(args, "fps", None) is not None:
        changes["fps"] = args.fps
    return base.replace(**changes) if changes else base


def _report_dict(rep, extra=None) -> dict:
    d = rep.as_dict()
    if extra:
        d.update(extra)
    return d


def _sources_for(track: PoseTrack, n: int):
    return [track[i].payload.absolute() for i in select_sources(track, n_extra=min(2, max(0, n - 1)))] if n else []


def _decoded_track(cfg, payloads) -> PoseTrack:
    # yaw and eye state are not transmitted; written as 0 / open
    return PoseTrack(cfg, tuple(TrackFrame(p.frame_index, 0.0, True, p) for p in payloads))


# commands


def cmd_gen_track(args) -> int:
    cfg = _config(args, PRESETS[args.config])
    track = gen_track(args.frames, args.amplitude, args.noise, args.seed, cfg)
    if args.out == "-":
        trackio.write_track(track, sys.stdout)
    else:
        trackio.write_track(track, args.out)
        _emit({"frames": len(track), "yaw_std": float(np.std(track.yaws)), "out": args.out}, args.json)
    return EXIT_OK


def cmd_train_prior(args) -> int:
    tracks = [trackio.read_track(p) for p in args.tracks]
    cfg = tracks[0].cfg
    for p, t in zip(args.tracks, tracks):
        if (t.cfg.n_sup, t.cfg.n_unsup, t.cfg.with_jacobians, t.cfg.M) != (cfg.n_sup, cfg.n_unsup, cfg.with_jacobians, cfg.M):
            raise UsageError(f"{p}: keypoint layout differs from {args.tracks[0]}")
    cfg = _config(args, cfg)
    prior = train_prior([t.payloads for t in tracks], cfg, smoothing=args.smoothing)
    prior.save(args.out)
    rep = entropy_report(prior, cfg)
    _emit({"out": args.out, "hash": prior.hash.hex(), "tracks": len(tracks),
           "key_bits_per_frame": rep.key_bits_per_frame, "delta_bits_per_frame": rep.delta_bits_per_frame}, args.json)
    return EXIT_OK


def cmd_encode(args) -> int:
    track = trackio.read_track(args.track)
    prior = PriorModel.load(args.prior)
    cfg = _config(args, track.cfg)
    ch = FileChannel(args.out, "wb")
    try:
        sess = open_sender(ch, cfg, prior, _sources_for(track, args.sources))
        for p in track.payloads:
            send_frame(sess, p)
    finally:
        ch.close()
    if args.reference:
        codec = FrameCodec(cfg, prior)
        trackio.write_track(_decoded_track(cfg, [codec.dequantized(p) for p in track.payloads]), args.reference)
    _emit(_report_dict(bandwidth_report(sess), {"out": args.out}), args.json)
    return EXIT_OK


def cmd_decode(args) -> int:
    prior = PriorModel.load(args.prior)
    ch = FileChannel(args.stream, "rb")
    try:
        sess = open_receiver(ch, prior)
        payloads = list(iter_frames(sess))
    finally:
        ch.close()
    trackio.write_track(_decoded_track(sess.cfg, payloads), args.out)
    _emit(_report_dict(bandwidth_report(sess), {"out": args.out}), args.json)
    return EXIT_OK


def _parse_channel(spec: str):
    if spec == "mem":
        return ("mem", None)
    kind, sep, rest = spec.partition(":")
    if kind == "file" and sep and rest:
        return ("file", rest)
    if kind == "tcp" and sep:
        host, sep2, port = rest.rpartition(":")
        if sep2 and port.isdigit():
            return ("tcp", (host or "127.0.0.1", int(port)))
    raise UsageError(f"bad channel {spec!r}; expected mem, file:PATH or tcp:HOST:PORT")


class _CuttingChannel:
    """Forwards writes until ``limit`` bytes have passed, then closes the channel."""

    def __init__(self, inner, limit: int):
        self.inner, self.left = inner, limit

    def write(self, data: bytes) -> None:
        if self.left <= 0:
            raise ChannelClosed("channel cut")
        chunk = data[: self.left]
        self.inner.write(chunk)
        self.left -= len(chunk)
        if self.left <= 0:
            self.inner.close()
            raise ChannelClosed("channel cut")

    def close(self) -> None:
        self.inner.close()


def simulate(track: PoseTrack, prior: PriorModel, channel: str = "mem", cfg=None, cut_after: int | None = None):
    """Run a sender and a receiver concurrently over ``channel``.

    Returns ``(sender_session, receiver_session, decoded_payloads)``; errors on
    either side are re-raised here (receiver first).
    """
    cfg = cfg or track.cfg
    kind, target = _parse_channel(channel)
    payloads = track.payloads
    result: dict = {}
    srv = None

    if kind == "mem":
        pipe = MemoryPipe()
        make_tx = make_rx = lambda: pipe
    elif kind == "file":
        make_tx = lambda: FileChannel(target, "wb")
        make_rx = lambda: FileChannel(target, "rb")
    else:
        srv = tcp_listener(*target)
        host, port = srv.getsockname()[:2]
        make_tx = lambda: TcpChannel.connect(host, port)
        make_rx = lambda: tcp_accept(srv)

    def sender():
        ch = make_tx()
        if cut_after is not None:
            ch = _CuttingChannel(ch, cut_after)
        try:
            sess = open_sender(ch, cfg, prior, _sources_for(track, 3))
            result["tx"] = sess
            for p in payloads:
                send_frame(sess, p)
        except BaseException as exc:  # noqa: BLE001 - handed to the caller
            result["tx_error"] = exc
        finally:
            ch.close()

    def receiver():
        ch = make_rx()
        try:
            sess = open_receiver(ch, prior)
            result["rx"] = sess
            result["decoded"] = got = []
            for p in iter_frames(sess):
                got.append(p)
        except BaseException as exc:  # noqa: BLE001
            result["rx_error"] = exc
        finally:
            ch.close()

    try:
        if kind == "file":
            # a file is only readable once written; run the two ends back to back
            sender()
            receiver()
        else:
            threads = [threading.Thread(target=receiver), threading.Thread(target=sender)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        if srv is not None:
            srv.close()
    if "rx_error" in result:
        raise result["rx_error"]
    if "tx_error" in result:
        raise result["tx_error"]
    return result["tx"], result["rx"], result["decoded"]


def cmd_simulate(args) -> int:
    track = trackio.read_track(args.track)
    prior = PriorModel.load(args.prior)
    cfg = _config(args, track.cfg)
    tx, rx, decoded = simulate(track, prior, args.channel, cfg, args.cut_after)
    codec = FrameCodec(cfg, prior)
    expected = [codec.dequantized(p) for p in track.payloads]
    match = len(decoded) == len(expected) and all(a == b for a, b in zip(decoded, expected))
    if args.out:
        trackio.write_track(_decoded_track(cfg, decoded), args.out)
    rep = _report_dict(bandwidth_report(rx), {"channel": args.channel, "match": match, "mirror": tx.state == rx.state})
    _emit(rep, args.json)
    return EXIT_OK if match else EXIT_PROTOCOL


def _parse_indices(text: str, n: int) -> list[int]:
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad source list {text!r}") from None
    if not idx or any(not 0 <= i < n for i in idx):
        raise UsageError(f"source indices must lie in [0, {n})")
    return idx


def fuse_demo(track: PoseTrack, sources: Sequence[int], frame: int, channels: int = 32):
    """Frontalize the chosen source frames and animate the result to ``frame``.

    Returns ``(fused, animated, weights)``.
    """
    cfg = track.cfg
    p_r = front_reference(cfg)
    enc = track_encoder(track, channels, cfg.grid)
    srcs = [(track[i].frame_index, track[i].payload.absolute()) for i in sources]
    fused, weights = frontalize(srcs, p_r, enc, flow_provider(cfg.grid), return_weights=True)
    drv = track[frame].payload
    out = animate(fused, p_r, drv.absolute(), motion_provider(cfg.grid), concat_decoder, drv.expression)
    return fused, out, weights


def cmd_fuse_demo(args) -> int:
    track = trackio.read_track(args.track)
    if len(track) == 0:
        raise UsageError("track has no frames")
    sources = _parse_indices(args.sources, len(track)) if args.sources else select_sources(track)
    if not 0 <= args.frame < len(track):
        raise UsageError(f"--frame must lie in [0, {len(track)})")
    fused, out, _ = fuse_demo(track, sources, args.frame, args.channels)
    with open(args.out, "wb") as fh:
        fh.write(dump_arrays([fused.data, out.data]))
    _emit({"sources": ",".join(map(str, sources)), "frame": args.frame,
           "fused_shape": "x".join(map(str, fused.data.shape)), "out_shape": "x".join(map(str, out.data.shape)),
           "out": args.out}, args.json)
    return EXIT_OK


def cmd_bench(args) -> int:
    rep = run_bench(args.frames, args.repeats, args.seed, PRESETS[args.config])
    _emit(rep, args.json)
    return EXIT_OK


def _relaxed(y, mode):
    t = relaxed_triplet(y)
    if mode == "triplet":
        return t
    rest = [i for i in np.argsort(np.abs(y - y[t.a]), kind="stable") if i not in (t.a, t.b, t.c)]
    if not rest:
        raise NoValidSample("a quadruplet needs at least four frames")
    return Quad(t.a, t.c, t.b, int(rest[0]))


def cmd_sample(args) -> int:
    track = trackio.read_track(args.track)
    y = track.yaws
    rng = np.random.default_rng(args.seed)
    out = []
    for _ in range(args.count):
        try:
            if args.mode == "triplet":
                s = sample_triplet(y, args.min_span, rng)
            else:
                s = sample_quad(y, args.min_span, args.near_tol, rng)
        except NoValidSample:
            if not args.relax:
                raise
            out = [_relaxed(y, args.mode)]
            break
        out.append(s)
    if args.json:
        sys.stdout.write(json.dumps([[int(i) for i in s] for s in out]) + "\n")
    else:
        sys.stdout.write(format_samples(out))
    return EXIT_OK


def cmd_sources(args) -> int:
    track = trackio.read_track(args.track)
    idx = select_sources(track, args.n_extra)
    if args.json:
        sys.stdout.write(json.dumps(idx) + "\n")
    else:
        sys.stdout.write(format_samples([idx]))
    return EXIT_OK


def cmd_entropy(args) -> int:
    prior = PriorModel.load(args.prior)
    cfg = _config(args, PRESETS[args.config] if args.config else prior.cfg)
    rep = entropy_report(prior, cfg)
    sys.stdout.write(rep.to_json() + "\n" if args.json else rep.to_text())
    return EXIT_OK


def cmd_filter(args) -> int:
    tracks = [(p, trackio.read_track(p)) for p in args.tracks]
    kept = filter_rotation_tracks([t for _, t in tracks], args.threshold)
    keep_ids = {id(t) for t in kept}
    paths = [p for p, t in tracks if id(t) in keep_ids]
    if args.json:
        sys.stdout.write(json.dumps(paths) + "\n")
    else:
        sys.stdout.write("".join(p + "\n" for p in paths))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fzstream", description="Keypoint-stream codec and frontalization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    def stream_flags(p):
        p.add_argument("--keyframe-interval", type=int, help="frames between keyframes")
        p.add_argument("--fps", type=float, help="nominal frame rate for kbps figures")

    p = add("gen-track", cmd_gen_track, "write a synthetic FZTRACK file")
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--amplitude", type=float, default=0.29 * 2 ** 0.5, help="yaw sweep amplitude (rad)")
    p.add_argument("--noise", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", choices=sorted(PRESETS), default="sup_unsup_expr")
    p.add_argument("--out", required=True, help="output path, or - for stdout")
    stream_flags(p)

    p = add("train-prior", cmd_train_prior, "build an FZPRI1 prior from tracks")
    p.add_argument("tracks", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--smoothing", type=int, default=1)
    stream_flags(p)

    p = add("encode", cmd_encode, "compress a track into a stream file")
    p.add_argument("track")
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sources", type=int, default=0, help="source keypoint sets to put in the preamble")
    p.add_argument("--reference", help="also write the sender-side dequantized track here")
    stream_flags(p)

    p = add("decode", cmd_decode, "decompress a stream file into a track")
    p.add_argument("stream")
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)

    p = add("simulate", cmd_simulate, "run sender and receiver over a channel")
    p.add_argument("track")
    p.add_argument("--prior", required=True)
    p.add_argument("--channel", default="mem", help="mem | file:PATH | tcp:HOST:PORT")
    p.add_argument("--out", help="write the received track here")
    p.add_argument("--cut-after", type=int, help="close the channel after this many bytes")
    stream_flags(p)

    p = add("fuse-demo", cmd_fuse_demo, "frontalize sources and animate one frame")
    p.add_argument("track")
    p.add_argument("--sources", help="comma-separated frame positions (default: automatic selection)")
    p.add_argument("--frame", type=int, default=0, help="driving frame position")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--out", required=True, help="FZFM1 output (fused map, then animated map)")

    p = add("bench", cmd_bench, "measure codec and kernel throughput")
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", choices=sorted(PRESETS), default="sup_unsup_expr")

    p = add("sample", cmd_sample, "draw training triplets or quadruplets")
    p.add_argument("track")
    p.add_argument("--mode", choices=("triplet", "quad"), default="triplet")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-span", type=float, default=MIN_SPAN)
    p.add_argument("--near-tol", type=float, default=NEAR_TOL)
    p.add_argument("--relax", action="store_true", help="fall back to the widest-span tuple")

    p = add("sources", cmd_sources, "pick inference source frames")
    p.add_argument("track")
    p.add_argument("--n-extra", type=int, default=2)

    p = add("entropy", cmd_entropy, "entropy report of a prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--config", choices=sorted(PRESETS), help="keypoint layout for the per-frame bound")
    stream_flags(p)

    p = add("filter", cmd_filter, "list tracks with a large yaw range")
    p.add_argument("tracks", nargs="*")
    p.add_argument("--threshold", type=float, default=ROTATION_THRESHOLD)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fzstream: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolError, ChannelClosed, ChecksumFailure) as exc:
        print(f"fzstream: protocol error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (FzError, OSError, ValueError) as exc:
        print(f"fzstream: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
