"""Reading and writing ``FZTRACK`` text files.

Header::

    #FZTRACK v1 n_sup=33 n_unsup=10 jac=1 M=16

then one frame per line, whitespace separated::

    frame_index yaw eyes_open x1 y1 ... xK yK j1 ... j4U e1 ... eM

Coordinates are absolute (not mean-relative).  Jacobians are listed row-major
per unsupervised keypoint.  Reals are written with ``repr`` so a write/read
cycle is exact.
"""

from __future__ import annotations

import io
import os
from typing import Iterable, TextIO

import numpy as np

from .core import MotionPayload, PoseTrack, StreamConfig, TrackFrame
from .errors import FzError, TrackParseError

MAGIC = "#FZTRACK"
VERSION = "v1"


def format_header(cfg: StreamConfig) -> str:
    return f"{MAGIC} {VERSION} n_sup={cfg.n_sup} n_unsup={cfg.n_unsup} jac={int(cfg.with_jacobians)} M={cfg.M}"


def parse_header(line: str, base: StreamConfig | None = None) -> StreamConfig:
    parts = line.split()
    if len(parts) < 2 or parts[0] != MAGIC:
        raise TrackParseError("missing #FZTRACK header", line=1)
    if parts[1] != VERSION:
        raise TrackParseError(f"unsupported track version {parts[1]!r}", line=1)
    fields = {}
    for tok in parts[2:]:
        key, sep, val = tok.partition("=")
        if not sep:
            raise TrackParseError(f"bad header token {tok!r}", line=1)
        fields[key] = val
    try:
        n_sup = int(fields["n_sup"])
        n_unsup = int(fields["n_unsup"])
        jac = bool(int(fields["jac"]))
        m = int(fields["M"])
    except (KeyError, ValueError) as exc:
        raise TrackParseError(f"incomplete header: {exc}", line=1) from None
    base = base or StreamConfig()
    try:
        return base.replace(n_sup=n_sup, n_unsup=n_unsup, with_jacobians=jac, M=m)
    except FzError as exc:
        raise TrackParseError(str(exc), line=1) from None


def _fmt(x: float) -> str:
    return repr(float(x))


def format_frame(frame: TrackFrame) -> str:
    p = frame.payload
    vals = [str(frame.frame_index), _fmt(frame.yaw), "1" if frame.eyes_open else "0"]
    vals.extend(_fmt(v) for v in p.absolute_coords().ravel())
    if p.jacobians is not None:
        vals.extend(_fmt(v) for v in p.jacobians.ravel())
    vals.extend(_fmt(v) for v in p.expression)
    return " ".join(vals)


def write_track(track: PoseTrack, dest: str | os.PathLike | TextIO) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="ascii") as fh:
            write_track(track, fh)
        return
    dest.write(format_header(track.cfg) + "\n")
    for frame in track:
        dest.write(format_frame(frame) + "\n")


def dumps(track: PoseTrack) -> str:
    buf = io.StringIO()
    write_track(track, buf)
    return buf.getvalue()


def parse_frame(line: str, cfg: StreamConfig, lineno: int) -> TrackFrame:
    toks = line.split()
    n_jac = 4 * cfg.n_unsup if cfg.with_jacobians else 0
    expected = 3 + 2 * cfg.n_kp + n_jac + cfg.M
    if len(toks) != expected:
        raise TrackParseError(f"expected {expected} fields, found {len(toks)}", line=lineno)
    try:
        idx = int(toks[0])
        yaw = float(toks[1])
        eyes = toks[2]
        if eyes not in ("0", "1"):
            raise ValueError(f"eyes_open must be 0 or 1, got {eyes!r}")
        vals = np.array([float(t) for t in toks[3:]], dtype=np.float64)
    except ValueError as exc:
        raise TrackParseError(str(exc), line=lineno) from None
    k2 = 2 * cfg.n_kp
    coords = vals[:k2].reshape(-1, 2)
    jac = vals[k2 : k2 + n_jac].reshape(-1, 2, 2) if cfg.with_jacobians else None
    expr = vals[k2 + n_jac :]
    try:
        payload = MotionPayload.from_absolute(coords, jac, expr, frame_index=idx)
    except FzError as exc:
        raise TrackParseError(str(exc), line=lineno) from None
    return TrackFrame(idx, yaw, eyes == "1", payload)


def read_track(src: str | os.PathLike | TextIO | Iterable[str], base: StreamConfig | None = None) -> PoseTrack:
    """Parse a track; ``base`` supplies the config fields the header does not carry."""
    if isinstance(src, (str, os.PathLike)):
        with open(src, "r", encoding="ascii") as fh:
            return read_track(fh, base)
    lines = iter(src)
    try:
        header = next(lines)
    except StopIteration:
        raise TrackParseError("empty track file", line=1) from None
    cfg = parse_header(header, base)
    frames = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip() or line.startswith("#"):
            continue
        frames.append(parse_frame(line, cfg, lineno))
    try:
        return PoseTrack(cfg, tuple(frames))
    except FzError as exc:
        raise TrackParseError(str(exc)) from None


def loads(text: str, base: StreamConfig | None = None) -> PoseTrack:
    return read_track(io.StringIO(text), base)
