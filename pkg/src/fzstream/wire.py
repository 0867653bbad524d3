"""Session layer: stream header, byte channels and sender/receiver state.

Stream layout (little-endian)::

    b"FZWR"  magic
    u8       version (1)
    u16 x 8  n_sup, n_unsup, with_jacobians, M, grid_h, grid_w,
             keyframe_interval, fps * 100
    8 bytes  prior hash
    u8       field count F, then F x (u8 bits, f64 lo, f64 hi)
    u16      source count N, then N x (u16 n, u16 k, n*2 f64 coords, k*4 f64 Jacobians)
    ...      frame records (see ``codec.frame``)

The source keypoint sets are the out-of-band preamble describing the source
frames sent ahead of the call; pixel data is out of scope.
"""

from __future__ import annotations

import os
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec.frame import FrameCodec, CodecState, record_is_keyframe, record_prefix_size, record_total_size
from .codec.prior import PriorModel
from .codec.quant import FIELDS, FieldSpec
from .core import KeypointSet, MotionPayload, StreamConfig
from .errors import BadMagic, ChannelClosed, EmptyInput, PriorHashMismatch, ProtocolError, RangeViolation, VersionMismatch

MAGIC = b"FZWR"
VERSION = 1

_FIXED = struct.Struct("<4sB8H8s")
_SPEC = struct.Struct("<Bdd")


# channels


class MemoryPipe:
    """In-process one-way byte pipe; safe with one writer thread and one reader thread."""

    def __init__(self):
        self._buf = bytearray()
        self._closed = False
        self._cond = threading.Condition()

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                raise ChannelClosed("write on a closed pipe")
            self._buf += data
            self._cond.notify_all()

    def read_exact(self, n: int) -> bytes:
        with self._cond:
            while len(self._buf) < n and not self._closed:
                self._cond.wait()
            if len(self._buf) < n:
                raise ChannelClosed(f"pipe closed with {len(self._buf)} of {n} bytes pending", len(self._buf))
            out = bytes(self._buf[:n])
            del self._buf[:n]
            return out

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class FileChannel:
    """File-backed channel: open with ``mode="wb"`` to send, ``"rb"`` to receive."""

    def __init__(self, path: str | os.PathLike, mode: str):
        if mode not in ("rb", "wb"):
            raise ValueError("mode must be 'rb' or 'wb'")
        self._fh = open(path, mode)

    def write(self, data: bytes) -> None:
        self._fh.write(data)

    def read_exact(self, n: int) -> bytes:
        data = self._fh.read(n)
        if len(data) < n:
            raise ChannelClosed(f"end of file with {len(data)} of {n} bytes", len(data))
        return data

    def close(self) -> None:
        self._fh.close()


class TcpChannel:
    """Connected TCP socket as a byte channel."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 10.0) -> "TcpChannel":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None

    def read_exact(self, n: int) -> bytes:
        parts, got = [], 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except OSError as exc:
                raise ChannelClosed(str(exc), got) from None
            if not chunk:
                raise ChannelClosed(f"peer closed with {got} of {n} bytes", got)
            parts.append(chunk)
            got += len(chunk)
        return b"".join(parts)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


def tcp_accept(srv: socket.socket, timeout: float | None = 10.0) -> TcpChannel:
    srv.settimeout(timeout)
    sock, _ = srv.accept()
    sock.settimeout(None)
    return TcpChannel(sock)


# header


@dataclass(frozen=True, eq=False)
class StreamHeader:
    cfg: StreamConfig
    prior_hash: bytes
    specs: dict
    sources: tuple = ()
    version: int = VERSION

    def encode(self) -> bytes:
        cfg = self.cfg
        centi = round(cfg.fps * 100)
        if not 0 < centi <= 0xFFFF or centi / 100 != cfg.fps:
            raise RangeViolation(f"fps {cfg.fps} is not representable in hundredths below 655.36")
        vals = (cfg.n_sup, cfg.n_unsup, int(cfg.with_jacobians), cfg.M, cfg.grid_h, cfg.grid_w, cfg.keyframe_interval, centi)
        if any(v > 0xFFFF for v in vals):
            raise RangeViolation("config field exceeds 16 bits")
        if len(self.prior_hash) != 8:
            raise ValueError("prior hash must be 8 bytes")
        out = [_FIXED.pack(MAGIC, self.version, *vals, self.prior_hash)]
        out.append(struct.pack("<B", len(FIELDS)))
        for name in FIELDS:
            s = self.specs[name]
            out.append(_SPEC.pack(s.bits, s.lo, s.hi))
        out.append(struct.pack("<H", len(self.sources)))
        for kps in self.sources:
            jac = kps.jacobians
            k = 0 if jac is None else jac.shape[0]
            out.append(struct.pack("<HH", len(kps), k))
            out.append(np.ascontiguousarray(kps.coords, dtype="<f8").tobytes())
            if k:
                out.append(np.ascontiguousarray(jac, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def read(cls, channel) -> "StreamHeader":
        head = channel.read_exact(5)
        if head[:4] != MAGIC:
            raise BadMagic(f"expected {MAGIC!r}, got {head[:4]!r}")
        if head[4] != VERSION:
            raise VersionMismatch(f"stream version {head[4]}, this build speaks {VERSION}")
        rest = channel.read_exact(_FIXED.size - 5)
        _, _, n_sup, n_unsup, jac, m, gh, gw, kfi, centi, prior_hash = _FIXED.unpack(head + rest)
        try:
            cfg = StreamConfig(n_sup, n_unsup, bool(jac), m, gh, gw, kfi, centi / 100)
        except ValueError as exc:
            raise ProtocolError(f"invalid config in header: {exc}") from None
        (nf,) = struct.unpack("<B", channel.read_exact(1))
        if nf != len(FIELDS):
            raise ProtocolError(f"header lists {nf} fields, expected {len(FIELDS)}")
        specs = {}
        for name in FIELDS:
            bits, lo, hi = _SPEC.unpack(channel.read_exact(_SPEC.size))
            try:
                specs[name] = FieldSpec(name, bits, lo, hi)
            except ValueError as exc:
                raise ProtocolError(f"invalid field spec in header: {exc}") from None
        (ns,) = struct.unpack("<H", channel.read_exact(2))
        sources = []
        for _ in range(ns):
            n, k = struct.unpack("<HH", channel.read_exact(4))
            coords = np.frombuffer(channel.read_exact(16 * n), dtype="<f8").reshape(n, 2)
            jacs = np.frombuffer(channel.read_exact(32 * k), dtype="<f8").reshape(k, 2, 2) if k else None
            sources.append(KeypointSet.make(coords, jacs))
        return cls(cfg, prior_hash, specs, tuple(sources), VERSION)

    @classmethod
    def decode(cls, data: bytes) -> "StreamHeader":
        ch = MemoryPipe()
        ch.write(data)
        ch.close()
        return cls.read(ch)

    def __eq__(self, other):
        if not isinstance(other, StreamHeader):
            return NotImplemented
        return (
            self.cfg == other.cfg
            and self.prior_hash == other.prior_hash
            and all(self.specs[f] == other.specs[f] for f in FIELDS)
            and len(self.sources) == len(other.sources)
            and all(a == b for a, b in zip(self.sources, other.sources))
            and self.version == other.version
        )

    __hash__ = None


# sessions


@dataclass(eq=False)
class Session:
    role: str
    channel: object
    codec: FrameCodec
    header: StreamHeader
    state: CodecState = field(default_factory=CodecState)
    header_bytes: int = 0
    frames: int = 0
    payload_bytes: int = 0
    keyframe_bytes: int = 0
    frame_bytes: list = field(default_factory=list)
    failures: int = 0

    @property
    def cfg(self) -> StreamConfig:
        return self.codec.cfg

    @property
    def sources(self) -> tuple:
        return self.header.sources

    def _account(self, record: bytes) -> None:
        n = len(record)
        self.frames += 1
        self.payload_bytes += n
        self.frame_bytes.append(n)
        if record_is_keyframe(record):
            self.keyframe_bytes += n

    def close(self) -> None:
        self.channel.close()


def open_sender(channel, cfg: StreamConfig, prior: PriorModel, sources: Sequence[KeypointSet] = ()) -> Session:
    codec = FrameCodec(cfg, prior)
    header = StreamHeader(cfg, prior.hash, prior.specs, tuple(sources))
    data = header.encode()
    channel.write(data)
    return Session("sender", channel, codec, header, header_bytes=len(data))


def open_receiver(channel, prior: PriorModel) -> Session:
    header = StreamHeader.read(channel)
    if header.prior_hash != prior.hash:
        raise PriorHashMismatch(f"stream was coded with prior {header.prior_hash.hex()}, local prior is {prior.hash.hex()}")
    codec = FrameCodec(header.cfg, prior, header.specs)
    return Session("receiver", channel, codec, header, header_bytes=len(header.encode()))


def send_frame(session: Session, payload: MotionPayload) -> int:
    if session.role != "sender":
        raise ProtocolError("send_frame on a receiving session")
    record = session.codec.encode(session.state, payload)
    session.channel.write(record)
    session._account(record)
    return len(record)


def read_record(channel) -> bytes:
    """Pull exactly one frame record off ``channel``."""
    try:
        first = channel.read_exact(3)
    except ChannelClosed as exc:
        exc.boundary = True
        raise
    prefix = first + channel.read_exact(record_prefix_size(first) - 3)
    return prefix + channel.read_exact(record_total_size(prefix) - len(prefix))


def recv_frame(session: Session) -> MotionPayload:
    """Receive and decode the next frame.

    ``ChannelClosed`` if the stream ends (a partially received record is
    discarded).  Checksum failures consume the record, so the caller may keep
    reading; delta frames fail until the next keyframe restores sync.
    """
    if session.role != "receiver":
        raise ProtocolError("recv_frame on a sending session")
    record = read_record(session.channel)
    session._account(record)
    try:
        return session.codec.decode(session.state, record)
    except Exception:
        session.failures += 1
        raise


def at_clean_end(exc: ChannelClosed) -> bool:
    """True if ``exc`` came from a read that started exactly at a record boundary."""
    return exc.received == 0 and getattr(exc, "boundary", False)


def iter_frames(session: Session):
    """Yield received payloads until the stream ends cleanly between records.

    A stream cut inside a record still raises ``ChannelClosed``.
    """
    while True:
        try:
            yield recv_frame(session)
        except ChannelClosed as exc:
            if at_clean_end(exc):
                return
            raise


@dataclass(frozen=True)
class BandwidthReport:
    frames: int
    total_bits: int
    bits_per_frame: float
    kbps: float
    keyframe_share: float
    fps: float
    header_bits: int

    def as_dict(self) -> dict:
        return {
            "frames": self.frames,
            "total_bits": self.total_bits,
            "bits_per_frame": self.bits_per_frame,
            "kbps": self.kbps,
            "keyframe_share": self.keyframe_share,
            "fps": self.fps,
            "header_bits": self.header_bits,
        }


def kbps(bits_per_frame: float, fps: float) -> float:
    return fps * bits_per_frame / 1000.0


def bandwidth_report(session: Session) -> BandwidthReport:
    """Mean frame size and rate; header and preamble bytes are excluded."""
    if session.frames == 0:
        raise EmptyInput("no frames have gone through this session")
    total = 8 * session.payload_bytes
    mean = total / session.frames
    fps = session.cfg.fps
    return BandwidthReport(
        frames=session.frames,
        total_bits=total,
        bits_per_frame=mean,
        kbps=kbps(mean, fps),
        keyframe_share=session.keyframe_bytes / session.payload_bytes,
        fps=fps,
        header_bits=8 * session.header_bytes,
    )
