"""Static symbol distributions for the range coder.

One context per (field, kind), where kind is ``key`` (absolute codes on
keyframes) or ``delta`` (code differences otherwise).  Delta symbols are
offset by the field's ``max_code`` so they index ``[0, 2 * max_code]``.
Probabilities use add-``smoothing`` counts over the whole alphabet, so every
symbol stays codable.
"""

from __future__ import annotations

import binascii
import hashlib
import io
import os
import struct
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

from ..core import StreamConfig
from ..errors import EmptyInput, FzError
from .quant import DEFAULT_SPECS, FIELDS, FieldSpec
from .rangecoder import MAX_TOTAL

KINDS = ("key", "delta")
CONTEXTS = tuple((f, k) for f in FIELDS for k in KINDS)

MAGIC = b"FZPRI1"


class PriorFormatError(FzError, ValueError):
    pass


def context_id(field: str, kind: str) -> int:
    return 2 * FIELDS.index(field) + KINDS.index(kind)


def alphabet_size(spec: FieldSpec, kind: str) -> int:
    return spec.key_alphabet if kind == "key" else spec.delta_alphabet


class PriorModel:
    """Per-context histograms plus the derived (immutable) coding tables."""

    def __init__(
        self,
        counts: Sequence[np.ndarray],
        specs: Mapping[str, FieldSpec] = DEFAULT_SPECS,
        smoothing: int = 1,
        cfg: StreamConfig | None = None,
    ):
        if smoothing < 1 or int(smoothing) != smoothing:
            raise ValueError("smoothing must be a positive integer")
        self.specs = {name: specs[name] for name in FIELDS}
        self.smoothing = int(smoothing)
        self.cfg = cfg or StreamConfig()
        if len(counts) != len(CONTEXTS):
            raise ValueError(f"expected {len(CONTEXTS)} count tables, got {len(counts)}")
        tables = []
        for (field, kind), c in zip(CONTEXTS, counts):
            c = np.array(c, dtype=np.int64)
            if c.shape != (alphabet_size(self.specs[field], kind),):
                raise ValueError(f"count table for {field}/{kind} has wrong size {c.shape}")
            if (c < 0).any() or (c > 0xFFFFFFFF).any():
                raise ValueError("counts must fit in uint32")
            c.flags.writeable = False
            tables.append(c)
        self.counts = tuple(tables)

        freqs = [_coding_freqs(c + self.smoothing) for c in self.counts]
        self.sizes = np.array([f.size for f in freqs], dtype=np.int64)
        self.totals = np.array([int(f.sum()) for f in freqs], dtype=np.int64)
        self.base = np.zeros(len(freqs), dtype=np.int64)
        cum_parts, offset = [], 0
        for i, f in enumerate(freqs):
            self.base[i] = offset
            cum_parts.append(np.concatenate([[0], np.cumsum(f)]))
            offset += f.size + 1
        self.cum = np.concatenate(cum_parts).astype(np.int64)
        for arr in (self.sizes, self.totals, self.base, self.cum):
            arr.flags.writeable = False

        self._bytes = self._serialize()
        self.hash = hashlib.blake2b(self._bytes, digest_size=8).digest()
        self.crc_seed = binascii.crc_hqx(self.hash, 0xFFFF)

    # probabilities

    def probabilities(self, ctx: int) -> np.ndarray:
        """Smoothed model distribution of context ``ctx``."""
        c = self.counts[ctx] + self.smoothing
        return c / c.sum()

    def probability(self, field: str, kind: str, value: int) -> float:
        """Probability of an absolute code (``key``) or a signed code delta (``delta``)."""
        ctx = context_id(field, kind)
        sym = value if kind == "key" else value + self.specs[field].max_code
        c = self.counts[ctx]
        return float((c[sym] + self.smoothing) / (c.sum() + self.smoothing * c.size))

    def coding_probabilities(self, ctx: int) -> np.ndarray:
        """Distribution actually realized by the coder tables (equal to the model unless rescaled)."""
        b = self.base[ctx]
        f = np.diff(self.cum[b : b + self.sizes[ctx] + 1])
        return f / self.totals[ctx]

    # persistence

    def _serialize(self) -> bytes:
        cfg = self.cfg
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<HHBHH", cfg.n_sup, cfg.n_unsup, int(cfg.with_jacobians), cfg.M, cfg.keyframe_interval))
        buf.write(struct.pack("<IB", self.smoothing, len(FIELDS)))
        for name in FIELDS:
            s = self.specs[name]
            enc = name.encode("ascii")
            buf.write(struct.pack(f"<B{len(enc)}sBdd", len(enc), enc, s.bits, s.lo, s.hi))
        buf.write(struct.pack("<B", len(self.counts)))
        for c in self.counts:
            buf.write(struct.pack("<I", c.size))
            buf.write(c.astype("<u4").tobytes())
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        return self._bytes

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self._bytes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PriorModel":
        """Parse a complete prior file; trailing bytes are an error."""
        fh = io.BytesIO(data)
        prior = cls.read(fh)
        if fh.tell() != len(data):
            raise PriorFormatError("trailing bytes after prior data")
        return prior

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PriorModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def read(cls, fh: BinaryIO) -> "PriorModel":
        def take(n):
            b = fh.read(n)
            if len(b) != n:
                raise PriorFormatError("truncated prior file")
            return b

        if take(len(MAGIC)) != MAGIC:
            raise PriorFormatError("not an FZPRI1 prior file")
        n_sup, n_unsup, jac, m, kfi = struct.unpack("<HHBHH", take(9))
        smoothing, n_fields = struct.unpack("<IB", take(5))
        specs = {}
        try:
            for _ in range(n_fields):
                (ln,) = struct.unpack("<B", take(1))
                name = take(ln).decode("ascii")
                bits, lo, hi = struct.unpack("<Bdd", take(17))
                specs[name] = FieldSpec(name, bits, lo, hi)
            (n_ctx,) = struct.unpack("<B", take(1))
            counts = []
            for _ in range(n_ctx):
                (size,) = struct.unpack("<I", take(4))
                counts.append(np.frombuffer(take(4 * size), dtype="<u4").astype(np.int64))
            cfg = StreamConfig(n_sup=n_sup, n_unsup=n_unsup, with_jacobians=bool(jac), M=m, keyframe_interval=kfi)
            return cls(counts, specs, smoothing, cfg)
        except PriorFormatError:
            raise
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise PriorFormatError(f"invalid prior file: {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, PriorModel):
            return NotImplemented
        return self._bytes == other._bytes

    __hash__ = None

    def __repr__(self):
        return f"PriorModel(hash={self.hash.hex()}, smoothing={self.smoothing})"


def _coding_freqs(freqs: np.ndarray) -> np.ndarray:
    """Integer frequencies with total <= MAX_TOTAL, each >= 1 (identity when already small)."""
    total = int(freqs.sum())
    if total <= MAX_TOTAL:
        return freqs.astype(np.int64)
    budget = MAX_TOTAL - freqs.size
    if budget <= 0:
        raise ValueError("alphabet too large for the coder precision")
    return freqs.astype(np.int64) * budget // total + 1


def empty_counts(specs: Mapping[str, FieldSpec] = DEFAULT_SPECS) -> list[np.ndarray]:
    return [np.zeros(alphabet_size(specs[f], k), dtype=np.int64) for f, k in CONTEXTS]


def build_prior(
    training_streams: Iterable[Sequence],
    specs: Mapping[str, FieldSpec] = DEFAULT_SPECS,
    smoothing: int = 1,
    cfg: StreamConfig | None = None,
) -> PriorModel:
    """Histogram the symbols of quantized streams (sequences of ``QuantizedPayload``)."""
    counts = empty_counts(specs)
    n_streams = 0
    for stream in training_streams:
        n_streams += 1
        for qp in stream:
            kind = "key" if qp.is_keyframe else "delta"
            for field, codes in qp.codes.items():
                if len(codes) == 0:
                    continue
                ctx = context_id(field, kind)
                sym = np.asarray(codes, dtype=np.int64)
                if kind == "delta":
                    sym = sym + specs[field].max_code
                counts[ctx] += np.bincount(sym, minlength=counts[ctx].size)
    if n_streams == 0:
        raise EmptyInput("build_prior needs at least one training stream")
    return PriorModel(counts, specs, smoothing, cfg)


def uniform_prior(specs: Mapping[str, FieldSpec] = DEFAULT_SPECS, cfg: StreamConfig | None = None) -> PriorModel:
    return PriorModel(empty_counts(specs), specs, 1, cfg)
