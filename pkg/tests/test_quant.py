import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fzstream.codec import DEFAULT_SPECS, FIELDS, FieldSpec, Layout, dequantize, quantize, raw_bits
from fzstream.core import PRESETS, StreamConfig
from fzstream.errors import RangeViolation


class TestQuantize:
    @pytest.mark.parametrize("name", FIELDS)
    def test_endpoints(self, name):
        s = DEFAULT_SPECS[name]
        assert quantize(s.lo, s) == 0
        assert quantize(s.hi, s) == s.max_code

    def test_expression_zero(self):
        s = DEFAULT_SPECS["expression"]
        assert s.step == 2 / 1023
        assert quantize(0.0, s) == 512

    def test_jacobian_clamp(self):
        s = DEFAULT_SPECS["jacobian"]
        assert quantize(16.0, s) == 65535
        assert quantize(-1e9, s) == 0

    def test_standard_widths(self):
        assert [DEFAULT_SPECS[f].bits for f in ("unsup_kp", "sup_kp", "jacobian", "expression")] == [12, 8, 16, 10]

    @pytest.mark.parametrize("name", FIELDS)
    def test_sweep_bound(self, name):
        s = DEFAULT_SPECS[name]
        for v in np.random.default_rng(0).uniform(s.lo, s.hi, 1000):
            assert abs(v - dequantize(quantize(v, s), s)) <= s.step / 2

    @settings(max_examples=300, deadline=None)
    @given(st.sampled_from(FIELDS), st.floats(0.0, 1.0))
    def test_property_bound(self, name, t):
        s = DEFAULT_SPECS[name]
        v = s.lo + t * (s.hi - s.lo)
        q = quantize(v, s)
        assert 0 <= q <= s.max_code
        assert abs(v - dequantize(q, s)) <= s.step / 2 * (1 + 1e-12)


class TestDequantize:
    def test_endpoints(self):
        for s in DEFAULT_SPECS.values():
            assert dequantize(0, s) == s.lo
            assert abs(dequantize(s.max_code, s) - s.hi) <= np.spacing(abs(s.hi))

    def test_out_of_range(self):
        s = DEFAULT_SPECS["sup_kp"]
        with pytest.raises(RangeViolation):
            dequantize(256, s)
        with pytest.raises(RangeViolation):
            dequantize(-1, s)


class TestFieldSpec:
    def test_alphabets(self):
        s = FieldSpec("sup_kp", 8, -1.0, 1.0)
        assert s.key_alphabet == 256 and s.delta_alphabet == 511

    def test_invalid(self):
        with pytest.raises(RangeViolation):
            FieldSpec("sup_kp", 0, -1.0, 1.0)
        with pytest.raises(RangeViolation):
            FieldSpec("sup_kp", 8, 1.0, 1.0)
        with pytest.raises(ValueError):
            FieldSpec("bogus", 8, -1.0, 1.0)


class TestRawBits:
    def test_presets(self):
        assert {k: raw_bits(c) for k, c in PRESETS.items()} == {
            "fom": 24 + 10 * 2 * 12 + 40 * 16,
            "sup": 552,
            "sup_unsup": 24 + 528 + 240 + 640,
            "sup_unsup_expr": 1592,
        }


class TestLayout:
    def test_round_trip(self):
        from fzstream.synth import gen_track

        cfg = StreamConfig()
        lay = Layout(cfg)
        p = gen_track(3, seed=0, cfg=cfg)[2].payload
        flat = lay.flatten(p)
        assert flat.size == lay.size == 2 + 86 + 40 + 16
        back = lay.unflatten(flat.copy(), p.frame_index)
        assert back == p

    def test_rejects_out_of_range(self):
        from fzstream.core import KeypointSet, MotionPayload

        cfg = StreamConfig(n_sup=1, n_unsup=0, with_jacobians=False, M=0)
        p = MotionPayload(np.array([0.0, 2.0]), KeypointSet.make([[0.0, 0.0]]), np.zeros(0))
        with pytest.raises(RangeViolation):
            Layout(cfg).flatten(p)
