import binascii
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fzstream.codec import DEFAULT_SPECS, CONTEXTS, FieldSpec, PriorModel, ac_decode, ac_encode, context_id, uniform_prior
from fzstream.codec.frame import coded_body_size
from fzstream.codec.prior import empty_counts
from fzstream.codec.rangecoder import CRC_TABLE, crc16_symbols
from fzstream.errors import ChecksumFailure, PriorMismatch, TruncatedStream, UnknownSymbol


def _random_stream(rng, prior, n):
    ctx = rng.integers(0, len(CONTEXTS), n)
    sym = np.minimum(rng.geometric(0.2, n) - 1, prior.sizes[ctx] - 1)
    return sym, ctx


def _binary_prior():
    specs = dict(DEFAULT_SPECS)
    specs["expression"] = FieldSpec("expression", 1, -1.0, 1.0)
    counts = empty_counts(specs)
    counts[context_id("expression", "key")][:] = [98, 0]
    return PriorModel(counts, specs, 1)


class TestCrc:
    def test_matches_binascii(self, rng):
        for _ in range(50):
            sym = rng.integers(0, 1 << 20, rng.integers(0, 40))
            seed = int(rng.integers(0, 1 << 16))
            expect = binascii.crc_hqx(sym.astype("<u4").tobytes(), seed)
            assert crc16_symbols(sym, seed) == expect
        assert len(CRC_TABLE) == 256


class TestRoundTrip:
    def test_many_streams(self, priors, rng):
        prior = priors["sup_unsup_expr"]
        for _ in range(200):
            sym, ctx = _random_stream(rng, prior, int(rng.integers(0, 60)))
            assert np.array_equal(ac_decode(ac_encode(sym, ctx, prior), ctx, prior), sym)

    def test_10k_symbols_all_contexts(self, priors, rng):
        prior = priors["sup_unsup_expr"]
        ctx = rng.integers(0, len(CONTEXTS), 10_000)
        sym = (rng.random(10_000) * prior.sizes[ctx]).astype(np.int64)
        assert np.array_equal(ac_decode(ac_encode(sym, ctx, prior), ctx, prior), sym)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.floats(0, 1, exclude_max=True)), max_size=50))
    def test_property(self, pairs):
        prior = uniform_prior()
        ctx = np.array([c for c, _ in pairs], dtype=np.int64)
        sym = np.array([int(u * prior.sizes[c]) for c, u in pairs], dtype=np.int64)
        assert np.array_equal(ac_decode(ac_encode(sym, ctx, prior), ctx, prior), sym)

    def test_extreme_symbols(self):
        prior = _binary_prior()
        c = context_id("expression", "key")
        for sym in ([1] * 500, [0] * 500, [1, 0] * 200):
            ctx = [c] * len(sym)
            assert ac_decode(ac_encode(sym, ctx, prior), ctx, prior).tolist() == sym

    def test_deterministic(self, priors, rng):
        prior = priors["sup"]
        sym, ctx = _random_stream(rng, prior, 500)
        assert ac_encode(sym, ctx, prior) == ac_encode(sym.copy(), ctx.copy(), prior)


class TestEfficiency:
    def test_uniform_256(self, rng):
        prior = uniform_prior()
        c = context_id("sup_kp", "key")
        sym = rng.integers(0, 256, 10_000)
        bits = 8 * coded_body_size(sym, [c] * 10_000, prior)
        assert abs(bits - 80_000) <= 0.02 * 80_000

    def test_binary_099(self, rng):
        prior = _binary_prior()
        c = context_id("expression", "key")
        h = -(0.99 * math.log2(0.99) + 0.01 * math.log2(0.01))
        assert abs(10_000 * h - 807.9) < 0.1
        sym = (rng.random(10_000) < 0.01).astype(np.int64)
        bits = 8 * coded_body_size(sym, [c] * 10_000, prior)
        info = -sum(math.log2(0.99 if s == 0 else 0.01) for s in sym)
        assert bits <= 1.02 * info + 64
        assert bits <= 1.02 * 10_000 * h + 64 + 8 * math.sqrt(10_000 * 0.0099) * math.log2(99)


class TestErrors:
    def test_unknown_symbol(self, priors):
        prior = priors["sup"]
        c = context_id("sup_kp", "key")
        with pytest.raises(UnknownSymbol):
            ac_encode([256], [c], prior)
        with pytest.raises(UnknownSymbol):
            ac_encode([-1], [c], prior)
        with pytest.raises(UnknownSymbol):
            ac_encode([0], [10], prior)

    def test_truncated(self, priors, rng):
        prior = priors["sup"]
        sym, ctx = _random_stream(rng, prior, 300)
        blob = ac_encode(sym, ctx, prior)
        for cut in (0, 3, len(blob) // 2, len(blob) - 1):
            with pytest.raises(TruncatedStream):
                ac_decode(blob[:cut], ctx, prior)

    def test_trailing_bytes(self, priors, rng):
        prior = priors["sup"]
        sym, ctx = _random_stream(rng, prior, 30)
        with pytest.raises(ChecksumFailure):
            ac_decode(ac_encode(sym, ctx, prior) + b"\0", ctx, prior)

    def test_wrong_prior_detected(self, priors, rng):
        a, b = priors["sup"], priors["fom"]
        assert a.hash != b.hash
        for _ in range(100):
            sym, ctx = _random_stream(rng, a, 50)
            sym = np.minimum(sym, np.minimum(a.sizes, b.sizes)[ctx] - 1)
            with pytest.raises(PriorMismatch):
                ac_decode(ac_encode(sym, ctx, a), ctx, b)
