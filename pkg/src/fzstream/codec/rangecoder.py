"""Multi-context static range coder.

32-bit ``range`` register, ``low`` register with one carry bit and LZMA-style
carry propagation through a cached byte plus a run of pending 0xFF bytes.
Intervals are split multiply-then-divide (``range * cum // total``), so the
sub-intervals of one step tile the current range exactly.  Frequency totals
must not exceed ``2**24`` (the renormalization floor) so every symbol keeps a
non-empty slot.

Streams are flushed with the shortest byte string that lands inside the final
interval once padded with zero bytes; the decoder supplies those zeros itself.
Stream framing (lengths, checksums) lives one level up.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TOP = 1 << 24
MAX_TOTAL = TOP
_MASK32 = 0xFFFFFFFF


def _crc16_table() -> np.ndarray:
    # CRC-16/CCITT, polynomial 0x1021, MSB first (same as binascii.crc_hqx)
    table = np.zeros(256, dtype=np.int64)
    for i in range(256):
        crc = i << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table[i] = crc & 0xFFFF
    return table


CRC_TABLE = _crc16_table()


@njit(cache=True)
def crc16_symbols(symbols, crc):
    """Continue a CRC-16/CCITT over ``symbols`` serialized as little-endian uint32."""
    for i in range(symbols.size):
        s = symbols[i] & _MASK32
        for k in range(4):
            byte = (s >> (8 * k)) & 0xFF
            crc = ((crc << 8) & 0xFFFF) ^ CRC_TABLE[((crc >> 8) ^ byte) & 0xFF]
    return crc


@njit(cache=True)
def _emit(out, n, byte):
    # n == -1 marks the implicit leading zero byte, which is never stored
    if n >= 0:
        out[n] = byte
    return n + 1


@njit(cache=True)
def _shift_low(low, cache, pending, out, n):
    if low < 0xFF000000 or low > _MASK32:
        carry = low >> 32
        temp = cache
        while pending > 0:
            n = _emit(out, n, (temp + carry) & 0xFF)
            temp = 0xFF
            pending -= 1
        cache = (low >> 24) & 0xFF
    pending += 1
    low = (low & 0x00FFFFFF) << 8
    return low, cache, pending, n


@njit(cache=True)
def encode_symbols(symbols, ctx, cum, base, totals, out):
    """Range-code ``symbols`` (symbol ``i`` under context ``ctx[i]``) into ``out``.

    ``cum[base[c]:base[c] + A_c + 1]`` is the cumulative frequency table of
    context ``c`` and ``totals[c]`` its last entry.  Returns the byte count.
    """
    low = 0
    rng = _MASK32
    cache = 0
    pending = 1
    n = -1
    for i in range(symbols.size):
        c = ctx[i]
        b = base[c] + symbols[i]
        total = totals[c]
        lo_edge = rng * cum[b] // total
        hi_edge = rng * cum[b + 1] // total
        low += lo_edge
        rng = hi_edge - lo_edge
        while rng < TOP:
            rng <<= 8
            low, cache, pending, n = _shift_low(low, cache, pending, out, n)

    # pick the point of [low, low + rng) with the most trailing zero bytes
    k = 4
    v = low
    while k >= 0:
        m = np.int64(1) << (8 * k)
        v = ((low + m - 1) // m) * m
        if v < low + rng:
            break
        k -= 1
    low = v
    for _ in range(5 - k):
        low, cache, pending, n = _shift_low(low, cache, pending, out, n)
    while n > 0 and out[n - 1] == 0:
        n -= 1
    return max(n, 0)


@njit(cache=True)
def _next_byte(data, pos):
    if pos < data.size:
        return np.int64(data[pos])
    return np.int64(0)


@njit(cache=True)
def decode_symbols(data, ctx, cum, base, totals, sizes, symbols):
    """Inverse of :func:`encode_symbols`; fills ``symbols`` and returns bytes consumed
    (reads past the end count as zero bytes)."""
    code = np.int64(0)
    pos = 0
    for _ in range(4):
        code = (code << 8) | _next_byte(data, pos)
        pos += 1
    rng = np.int64(_MASK32)
    for i in range(symbols.size):
        c = ctx[i]
        b = base[c]
        total = totals[c]
        target = ((code + 1) * total - 1) // rng
        if target >= total:
            target = total - 1
        lo = 0
        hi = sizes[c]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum[b + mid] <= target:
                lo = mid
            else:
                hi = mid
        symbols[i] = lo
        lo_edge = rng * cum[b + lo] // total
        hi_edge = rng * cum[b + lo + 1] // total
        code -= lo_edge
        rng = hi_edge - lo_edge
        while rng < TOP:
            rng <<= 8
            code = ((code << 8) | _next_byte(data, pos)) & _MASK32
            pos += 1
    return pos


# Per-position frame parameters are bundled to keep call overhead low:
#   fpar = [lo, hi, max_code as float]   (3, n) float64
#   ipar = [max_code, key_ctx, delta_ctx] (3, n) int64


@njit(cache=True)
def encode_frame_kernel(values, fpar, ipar, prev, is_key, cum, base, totals, crc_init, codes, out):
    """Quantize, delta against ``prev``, range-code and checksum one frame.

    Writes absolute codes to ``codes`` and the coded bytes to ``out``; returns
    ``(n_bytes, crc)``, or ``(-1, 0)`` if a value is outside its range or not
    finite.  Quantization matches :func:`quant.quantize_array` bit for bit.
    """
    n = values.size
    symbols = np.empty(n, dtype=np.int64)
    ctx = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = values[i]
        lo = fpar[0, i]
        hi = fpar[1, i]
        if not (v >= lo and v <= hi):
            return -1, 0
        q = np.int64(np.floor((v - lo) * fpar[2, i] / (hi - lo) + 0.5))
        codes[i] = q
        if is_key:
            symbols[i] = q
            ctx[i] = ipar[1, i]
        else:
            symbols[i] = q - prev[i] + ipar[0, i]
            ctx[i] = ipar[2, i]
    nbytes = encode_symbols(symbols, ctx, cum, base, totals, out)
    return nbytes, crc16_symbols(symbols, crc_init)


@njit(cache=True)
def decode_frame_kernel(data, prev, is_key, fpar, ipar, cum, base, totals, sizes, crc_init, codes, values):
    """Range-decode one frame, rebuild absolute codes into ``codes`` and their
    dequantized values into ``values``.

    Returns ``(crc, in_range)``; ``in_range`` is False if a reconstructed code
    falls outside its field (only possible for corrupt input).
    """
    n = codes.size
    ctx = np.empty(n, dtype=np.int64)
    for i in range(n):
        ctx[i] = ipar[1, i] if is_key else ipar[2, i]
    symbols = np.empty(n, dtype=np.int64)
    decode_symbols(data, ctx, cum, base, totals, sizes, symbols)
    ok = True
    for i in range(n):
        if is_key:
            q = symbols[i]
        else:
            q = prev[i] + symbols[i] - ipar[0, i]
        if q < 0 or q > ipar[0, i]:
            ok = False
        codes[i] = q
        lo = fpar[0, i]
        values[i] = lo + q * (fpar[1, i] - lo) / fpar[2, i]
    return crc16_symbols(symbols, crc_init), ok
