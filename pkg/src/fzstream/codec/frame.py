"""Frame-level coding: quantize, delta against the previous frame, range-code.

Frame record (all integers little-endian)::

    u16  body length L
    u8   flags       bit 0: keyframe, bit 1: explicit frame index follows
    u32  frame index (only when flag bit 1 is set)
    L    range-coded body
    u16  CRC-16/CCITT of the coded symbols, seeded with the prior hash

The index is sent on keyframes and whenever it is not the successor of the
previous one, so receivers can rejoin a stream at any keyframe.

Standalone symbol streams (:func:`ac_encode`) use ``u32 L | body | u16 crc``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..core import MotionPayload, StreamConfig
from ..errors import ChecksumFailure, Desynchronized, PriorMismatch, RangeViolation, TruncatedStream, UnknownSymbol
from .prior import CONTEXTS, PriorModel, build_prior
from .quant import DEFAULT_SPECS, FIELDS, FieldSpec, Layout
from .rangecoder import crc16_symbols, decode_frame_kernel, decode_symbols, encode_frame_kernel, encode_symbols

FLAG_KEY = 0x01
FLAG_INDEX = 0x02

_HEAD = struct.Struct("<HB")
_INDEX = struct.Struct("<I")
_CRC = struct.Struct("<H")
_AC_LEN = struct.Struct("<I")

MAX_BODY = 0xFFFF
MAX_INDEX = 0xFFFFFFFF


@dataclass(eq=False)
class QuantizedPayload:
    """Integer symbols of one frame: absolute codes on keyframes, signed code deltas otherwise."""

    frame_index: int
    is_keyframe: bool
    codes: dict[str, np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.codes[f] for f in FIELDS])

    def __eq__(self, other):
        if not isinstance(other, QuantizedPayload):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.is_keyframe == other.is_keyframe
            and self.codes.keys() == other.codes.keys()
            and all(np.array_equal(self.codes[k], other.codes[k]) for k in self.codes)
        )

    __hash__ = None


@dataclass(eq=False)
class CodecState:
    """Mutable per-session coder memory; sender and receiver evolve identical copies."""

    codes: np.ndarray | None = None
    frame_counter: int = 0
    last_index: int = -1
    synced: bool = True

    def copy(self) -> "CodecState":
        return CodecState(None if self.codes is None else self.codes.copy(), self.frame_counter, self.last_index, self.synced)

    def __eq__(self, other):
        if not isinstance(other, CodecState):
            return NotImplemented
        if (self.codes is None) != (other.codes is None):
            return False
        if self.codes is not None and not np.array_equal(self.codes, other.codes):
            return False
        return (self.frame_counter, self.last_index, self.synced) == (other.frame_counter, other.last_index, other.synced)

    __hash__ = None


_layouts: dict = {}


def get_layout(cfg: StreamConfig, specs: Mapping[str, FieldSpec] = DEFAULT_SPECS) -> Layout:
    key = (cfg.n_sup, cfg.n_unsup, cfg.with_jacobians, cfg.M, tuple(specs[f] for f in FIELDS))
    lay = _layouts.get(key)
    if lay is None:
        lay = _layouts[key] = Layout(cfg, specs)
    return lay


def delta_step(state: CodecState, payload: MotionPayload, cfg: StreamConfig, specs: Mapping[str, FieldSpec] = DEFAULT_SPECS) -> QuantizedPayload:
    """Quantize ``payload`` and turn it into keyframe or delta symbols, advancing ``state``."""
    lay = get_layout(cfg, specs)
    codes = lay.quantize(lay.flatten(payload))
    is_key = state.frame_counter % cfg.keyframe_interval == 0 or state.codes is None
    sym = codes if is_key else codes - state.codes
    state.codes = codes
    state.frame_counter += 1
    state.last_index = payload.frame_index
    state.synced = True
    return QuantizedPayload(payload.frame_index, bool(is_key), lay.split(sym))


def quantize_stream(payloads: Iterable[MotionPayload], cfg: StreamConfig, specs: Mapping[str, FieldSpec] = DEFAULT_SPECS) -> list[QuantizedPayload]:
    state = CodecState()
    return [delta_step(state, p, cfg, specs) for p in payloads]


def train_prior(
    payload_streams: Iterable[Sequence[MotionPayload]],
    cfg: StreamConfig,
    specs: Mapping[str, FieldSpec] = DEFAULT_SPECS,
    smoothing: int = 1,
) -> PriorModel:
    """Quantize each stream the way a sender would and histogram the symbols."""
    return build_prior((quantize_stream(s, cfg, specs) for s in payload_streams), specs, smoothing, cfg)


class FrameCodec:
    """Encoder/decoder for one configuration and prior; holds no per-session state."""

    def __init__(self, cfg: StreamConfig, prior: PriorModel, specs: Mapping[str, FieldSpec] | None = None):
        self.cfg = cfg
        self.prior = prior
        self.specs = dict(prior.specs if specs is None else specs)
        for f in FIELDS:
            if self.specs[f] != prior.specs[f]:
                raise PriorMismatch(f"field spec for {f} differs from the prior's")
        self.layout = get_layout(cfg, self.specs)
        lay = self.layout
        self._zeros = np.zeros(lay.size, dtype=np.int64)
        self._cap = 4 * lay.size + 8
        self._key = cfg.keyframe_interval

    def new_state(self) -> CodecState:
        return CodecState()

    def dequantized(self, payload: MotionPayload) -> MotionPayload:
        """What a receiver will reconstruct for ``payload``."""
        lay = self.layout
        return lay.unflatten(lay.dequantize(lay.quantize(lay.flatten(payload))), payload.frame_index)

    def encode(self, state: CodecState, payload: MotionPayload) -> bytes:
        return self.encode_with_codes(state, payload)[0]

    def encode_with_codes(self, state: CodecState, payload: MotionPayload) -> tuple[bytes, np.ndarray]:
        lay = self.layout
        prior = self.prior
        values = lay.flatten_unchecked(payload)
        index = payload.frame_index
        if not 0 <= index <= MAX_INDEX:
            raise RangeViolation(f"frame index {index} does not fit in 32 bits")
        is_key = state.codes is None or state.frame_counter % self._key == 0
        prev = self._zeros if is_key else state.codes
        codes = np.empty(lay.size, dtype=np.int64)
        out = np.empty(self._cap, dtype=np.uint8)
        nbytes, crc = encode_frame_kernel(
            values, lay.fpar, lay.ipar, prev, is_key, prior.cum, prior.base, prior.totals, prior.crc_seed, codes, out
        )
        if nbytes < 0:
            lay.raise_invalid(payload)
        if nbytes > MAX_BODY:
            raise RangeViolation("coded frame exceeds the 16-bit length field")  # pragma: no cover
        flags = FLAG_KEY if is_key else 0
        parts = []
        if is_key or index != state.last_index + 1:
            flags |= FLAG_INDEX
            parts.append(_HEAD.pack(nbytes, flags) + _INDEX.pack(index))
        else:
            parts.append(_HEAD.pack(nbytes, flags))
        parts.append(out[:nbytes].tobytes())
        parts.append(_CRC.pack(crc))
        state.codes = codes
        state.frame_counter += 1
        state.last_index = index
        state.synced = True
        return b"".join(parts), codes

    def decode(self, state: CodecState, record: bytes) -> MotionPayload:
        """Decode one frame record and advance ``state``.

        Raises ``TruncatedStream`` for short records, ``Desynchronized`` for a
        delta frame while out of sync and ``ChecksumFailure`` on corruption; in
        the latter two cases the receiver stays out of sync until the next
        keyframe.
        """
        lay = self.layout
        prior = self.prior
        n = len(record)
        if n < _HEAD.size:
            raise TruncatedStream("frame record shorter than its header")
        body_len, flags = _HEAD.unpack_from(record, 0)
        pos = _HEAD.size
        if flags & FLAG_INDEX:
            if n < pos + _INDEX.size:
                raise TruncatedStream("frame record ends inside its index")
            (index,) = _INDEX.unpack_from(record, pos)
            pos += _INDEX.size
        else:
            index = state.last_index + 1
        end = pos + body_len
        if n < end + _CRC.size:
            raise TruncatedStream(f"frame record needs {end + _CRC.size} bytes, got {n}")
        state.frame_counter += 1
        if flags & ~(FLAG_KEY | FLAG_INDEX) or n != end + _CRC.size:
            state.synced = False
            raise ChecksumFailure("malformed frame record")
        is_key = bool(flags & FLAG_KEY)
        if not is_key and (not state.synced or state.codes is None):
            state.synced = False
            raise Desynchronized("delta frame received while out of sync; waiting for a keyframe")
        prev = self._zeros if is_key else state.codes
        codes = np.empty(lay.size, dtype=np.int64)
        values = np.empty(lay.size, dtype=np.float64)
        data = np.frombuffer(record, dtype=np.uint8, count=body_len, offset=pos)
        crc, in_range = decode_frame_kernel(
            data, prev, is_key, lay.fpar, lay.ipar, prior.cum, prior.base, prior.totals, prior.sizes, prior.crc_seed, codes, values
        )
        (sent_crc,) = _CRC.unpack_from(record, end)
        if crc != sent_crc or not in_range:
            state.synced = False
            raise ChecksumFailure("frame checksum mismatch (corrupt record or different prior)")
        state.codes = codes
        state.last_index = index
        state.synced = True
        return lay.unflatten(values, index)


def record_prefix_size(first: bytes) -> int:
    """Header length implied by the first three bytes of a record."""
    return _HEAD.size + (_INDEX.size if first[2] & FLAG_INDEX else 0)


def record_total_size(header: bytes) -> int:
    """Full record length given its header (see :func:`record_prefix_size`)."""
    body_len, flags = _HEAD.unpack_from(header, 0)
    return record_prefix_size(header) + body_len + _CRC.size


def record_is_keyframe(record: bytes) -> bool:
    return bool(record[2] & FLAG_KEY)


_codecs: dict = {}


def _codec(prior: PriorModel, cfg: StreamConfig, specs) -> FrameCodec:
    key = (id(prior), cfg, None if specs is None else tuple(specs[f] for f in FIELDS))
    c = _codecs.get(key)
    if c is None or c.prior is not prior:
        c = _codecs[key] = FrameCodec(cfg, prior, specs)
    return c


def encode_frame(state: CodecState, payload: MotionPayload, prior: PriorModel, cfg: StreamConfig, specs=None) -> bytes:
    return _codec(prior, cfg, specs).encode(state, payload)


def decode_frame(state: CodecState, record: bytes, prior: PriorModel, cfg: StreamConfig, specs=None) -> MotionPayload:
    return _codec(prior, cfg, specs).decode(state, record)


# standalone symbol streams


def _contexts(contexts, count: int) -> np.ndarray:
    ctx = np.asarray(contexts, dtype=np.int64).reshape(-1)
    if ctx.size != count:
        raise ValueError(f"{count} symbols but {ctx.size} contexts")
    if ctx.size and (ctx.min() < 0 or ctx.max() >= len(CONTEXTS)):
        raise UnknownSymbol("context id out of range")
    return ctx


def ac_encode(symbols, contexts, prior: PriorModel) -> bytes:
    """Range-code ``symbols`` (alphabet indices, delta symbols already offset) under ``contexts``."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    ctx = _contexts(contexts, sym.size)
    if sym.size and ((sym < 0).any() or (sym >= prior.sizes[ctx]).any()):
        bad = int(np.flatnonzero((sym < 0) | (sym >= prior.sizes[ctx]))[0])
        raise UnknownSymbol(f"symbol {int(sym[bad])} at position {bad} is outside context {int(ctx[bad])}'s alphabet")
    out = np.empty(4 * sym.size + 8, dtype=np.uint8)
    n = encode_symbols(sym, ctx, prior.cum, prior.base, prior.totals, out)
    crc = crc16_symbols(sym, prior.crc_seed)
    return _AC_LEN.pack(n) + out[:n].tobytes() + _CRC.pack(crc)


def ac_decode(data: bytes, contexts, prior: PriorModel) -> np.ndarray:
    """Inverse of :func:`ac_encode`; ``len(contexts)`` symbols are decoded."""
    ctx = _contexts(contexts, np.size(contexts))
    if len(data) < _AC_LEN.size:
        raise TruncatedStream("symbol stream shorter than its length field")
    (n,) = _AC_LEN.unpack_from(data, 0)
    need = _AC_LEN.size + n + _CRC.size
    if len(data) < need:
        raise TruncatedStream(f"symbol stream needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise ChecksumFailure("trailing bytes after symbol stream")
    body = np.frombuffer(data, dtype=np.uint8, count=n, offset=_AC_LEN.size)
    sym = np.empty(ctx.size, dtype=np.int64)
    decode_symbols(body, ctx, prior.cum, prior.base, prior.totals, prior.sizes, sym)
    (sent,) = _CRC.unpack_from(data, _AC_LEN.size + n)
    if crc16_symbols(sym, prior.crc_seed) != sent:
        raise PriorMismatch("symbol checksum mismatch: stream was coded under a different prior")
    return sym


def coded_body_size(symbols, contexts, prior: PriorModel) -> int:
    """Bytes of range-coder output alone, without framing."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    ctx = _contexts(contexts, sym.size)
    out = np.empty(4 * sym.size + 8, dtype=np.uint8)
    return int(encode_symbols(sym, ctx, prior.cum, prior.base, prior.totals, out))
