import json
import math

import numpy as np
import pytest

from fzstream.codec import CONTEXTS, DEFAULT_SPECS, PriorModel, context_id, uniform_prior
from fzstream.codec.frame import coded_body_size
from fzstream.codec.prior import empty_counts
from fzstream.core import KeypointSet, PRESETS
from fzstream.errors import DegenerateBox, NonFinite, ShapeMismatch
from fzstream.metrics import bbox_diagonal, entropy_bits, entropy_report, nme


def loop_nme(pred, gt):
    xs = [p[0] for p in gt]
    ys = [p[1] for p in gt]
    diag = math.sqrt((max(xs) - min(xs)) ** 2 + (max(ys) - min(ys)) ** 2)
    total = 0.0
    for (px, py), (gx, gy) in zip(pred, gt):
        total += math.sqrt((px - gx) ** 2 + (py - gy) ** 2)
    return total / len(gt) / diag * 100.0


class TestNme:
    def test_identical(self, rng):
        g = rng.uniform(-1, 1, (33, 2))
        assert nme(g, g) == 0.0
        assert nme(KeypointSet.make(g), KeypointSet.make(g)) == 0.0

    def test_one_percent(self, rng):
        g = rng.uniform(-1, 1, (20, 2))
        d = bbox_diagonal(g)
        ang = rng.uniform(0, 2 * np.pi, 20)
        p = g + 0.01 * d * np.stack([np.cos(ang), np.sin(ang)], 1)
        assert abs(nme(p, g) - 1.0) < 1e-12

    def test_loop_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 50))
            g = rng.uniform(-1, 1, (n, 2))
            p = g + rng.normal(scale=0.05, size=(n, 2))
            assert abs(nme(p, g) - loop_nme(p.tolist(), g.tolist())) <= 1e-12

    def test_scale_invariance(self, rng):
        for _ in range(50):
            g = rng.uniform(-1, 1, (10, 2))
            p = g + rng.normal(scale=0.05, size=(10, 2))
            lam = rng.uniform(0.1, 10)
            assert abs(nme(lam * p, lam * g) - nme(p, g)) <= 1e-12

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            nme(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(DegenerateBox):
            nme(np.ones((3, 2)), np.ones((3, 2)))
        with pytest.raises(NonFinite):
            nme([[np.nan, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]])

    def test_zero_area_box_allowed(self):
        g = [[0.0, 0.0], [1.0, 0.0]]
        assert nme(g, g) == 0.0


class TestEntropy:
    def test_uniform_256(self):
        rep = entropy_report(uniform_prior(), PRESETS["sup"])
        ctx = next(c for c in rep.contexts if (c.field, c.kind) == ("sup_kp", "key"))
        assert abs(ctx.bits_per_symbol - 8.0) < 1e-12
        assert entropy_bits(np.full(256, 1 / 256)) == 8.0

    def test_deterministic_context(self):
        counts = empty_counts()
        n = 10**7
        counts[context_id("sup_kp", "delta")][255] = n
        rep = entropy_report(PriorModel(counts), PRESETS["sup"])
        ctx = next(c for c in rep.contexts if (c.field, c.kind) == ("sup_kp", "delta"))
        total = n + 511
        analytic = -((n + 1) / total) * math.log2((n + 1) / total) - 510 * (1 / total) * math.log2(1 / total)
        assert abs(ctx.bits_per_symbol - analytic) < 1e-12
        assert ctx.bits_per_symbol < 0.01

    def test_empty_expression(self, priors):
        rep = entropy_report(priors["sup"], PRESETS["sup"])
        for c in rep.contexts:
            if c.field in ("expression", "unsup_kp", "jacobian"):
                assert c.symbols_per_frame == 0
        key = sum(c.bits_per_symbol * c.symbols_per_frame for c in rep.contexts if c.kind == "key")
        assert rep.key_bits_per_frame == key

    def test_delta_below_key(self, priors):
        rep = entropy_report(priors["sup_unsup_expr"])
        assert rep.delta_bits_per_frame < 0.6 * rep.key_bits_per_frame
        k = rep.keyframe_interval
        assert rep.bits_per_frame == pytest.approx((rep.key_bits_per_frame + (k - 1) * rep.delta_bits_per_frame) / k)

    def test_bound_below_coded(self, priors, rng):
        prior = priors["sup_unsup_expr"]
        cfg = PRESETS["sup_unsup_expr"]
        rep = entropy_report(prior, cfg)
        n_frames = 1000
        syms, ctxs = [], []
        for i, (field, kind) in enumerate(CONTEXTS):
            n = next(c.symbols_per_frame for c in rep.contexts if (c.field, c.kind) == (field, kind))
            if kind != "delta" or n == 0:
                continue
            p = prior.probabilities(i)
            syms.append(rng.choice(p.size, n * n_frames, p=p))
            ctxs.append(np.full(n * n_frames, i))
        measured = 8 * coded_body_size(np.concatenate(syms), np.concatenate(ctxs), prior) / n_frames
        assert rep.delta_bits_per_frame <= measured + 1

    def test_outputs(self, priors):
        rep = entropy_report(priors["sup"])
        d = json.loads(rep.to_json())
        assert d["bits_per_frame"] == rep.bits_per_frame and len(d["contexts"]) == 10
        assert "sup_kp.delta.entropy=" in rep.to_text()
