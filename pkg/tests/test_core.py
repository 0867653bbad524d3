import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fzstream.core import (
    PRESETS,
    FeatureMap,
    FlowField,
    KeypointSet,
    MotionPayload,
    PoseTrack,
    ReferencePose,
    ScalarMap,
    StreamConfig,
    TrackFrame,
    remap_expression,
    validate_keypoints,
    validate_payload,
)
from fzstream.errors import EmptyInput, NonFinite, RangeViolation, ShapeMismatch


def payload_for(cfg, rng, frame_index=0):
    coords = rng.uniform(-0.5, 0.5, (cfg.n_kp, 2))
    jac = rng.uniform(-2, 2, (cfg.n_unsup, 2, 2)) if cfg.with_jacobians else None
    return MotionPayload.from_absolute(coords, jac, rng.uniform(-1, 1, cfg.M), frame_index)


class TestStreamConfig:
    def test_defaults(self):
        cfg = StreamConfig()
        assert (cfg.n_sup, cfg.n_unsup, cfg.with_jacobians, cfg.M) == (33, 10, True, 16)
        assert cfg.grid == (32, 32)
        assert cfg.fps == 15.0
        assert cfg.keyframe_interval == 100
        assert cfg.n_kp == 43

    @pytest.mark.parametrize(
        "changes",
        [
            {"n_sup": -1},
            {"n_unsup": -1},
            {"n_sup": 0, "n_unsup": 0},
            {"M": -1},
            {"grid_h": 1},
            {"grid_w": 1},
            {"keyframe_interval": 0},
            {"fps": 0.0},
            {"fps": float("nan")},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(RangeViolation):
            StreamConfig().replace(**changes)

    def test_frozen(self):
        with pytest.raises(dataclasses.FrozenInstanceError):
            StreamConfig().M = 3

    def test_presets(self):
        assert PRESETS["fom"].n_sup == 0 and PRESETS["fom"].n_unsup == 10
        assert PRESETS["sup"].n_unsup == 0 and not PRESETS["sup"].with_jacobians
        assert PRESETS["sup_unsup"].M == 0
        assert PRESETS["sup_unsup_expr"].M == 16


class TestValidatePayload:
    def test_43_coords_ok(self, rng):
        cfg = StreamConfig(n_sup=33, n_unsup=10)
        validate_payload(payload_for(cfg, rng), cfg)

    def test_zero_coords(self):
        cfg = StreamConfig(n_sup=33, n_unsup=10)
        p = MotionPayload(np.zeros(2), KeypointSet(np.zeros((0, 2)), np.zeros((10, 2, 2))), np.zeros(16))
        with pytest.raises(ShapeMismatch):
            validate_payload(p, cfg)

    def test_jacobian_20_out_of_range(self, rng):
        cfg = StreamConfig()
        p = payload_for(cfg, rng)
        jac = p.jacobians.copy()
        jac[3, 0, 1] = 20.0
        bad = MotionPayload(p.mean_pos, KeypointSet(p.offsets.coords, jac), p.expression)
        with pytest.raises(RangeViolation):
            validate_payload(bad, cfg)

    def test_nonfinite(self, rng):
        cfg = StreamConfig()
        p = payload_for(cfg, rng)
        e = p.expression.copy()
        e[0] = np.nan
        with pytest.raises(NonFinite):
            validate_payload(MotionPayload(p.mean_pos, p.offsets, e), cfg)

    def test_missing_and_extra_jacobians(self, rng):
        cfg = StreamConfig()
        p = payload_for(cfg, rng)
        with pytest.raises(ShapeMismatch):
            validate_payload(MotionPayload(p.mean_pos, KeypointSet(p.offsets.coords, None), p.expression), cfg)
        with pytest.raises(ShapeMismatch):
            validate_payload(p, cfg.replace(with_jacobians=False))

    def test_wrong_expression_length(self, rng):
        cfg = StreamConfig()
        with pytest.raises(ShapeMismatch):
            validate_payload(payload_for(cfg, rng), cfg.replace(M=3))

    def test_offset_out_of_range(self, rng):
        cfg = StreamConfig(n_sup=2, n_unsup=0, with_jacobians=False, M=0)
        p = MotionPayload(np.zeros(2), KeypointSet(np.array([[1.5, 0.0], [0.0, 0.0]])), np.zeros(0))
        with pytest.raises(RangeViolation):
            validate_payload(p, cfg)


class TestFromAbsolute:
    def test_clamps_and_counts(self):
        coords = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 0.2]])
        p = MotionPayload.from_absolute(coords, np.full((1, 2, 2), 20.0), [2.0, -0.5])
        assert p.clamped == 1 + 4 + 1
        assert p.offsets.coords.max() <= 1.0
        assert p.jacobians.max() == 15.0
        assert p.expression.tolist() == [1.0, -0.5]

    def test_in_range_not_clamped(self, rng):
        p = payload_for(StreamConfig(), rng)
        assert p.clamped == 0

    def test_remap_expression(self):
        p = MotionPayload.from_absolute(np.zeros((1, 2)), None, [0.0, 0.5, 1.0], expression_range=(0.0, 1.0))
        assert p.expression.tolist() == [-1.0, 0.0, 1.0]
        assert remap_expression([0.25], 0.0, 1.0).tolist() == [-0.5]
        with pytest.raises(RangeViolation):
            remap_expression([0.0], 1.0, 1.0)

    def test_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            MotionPayload.from_absolute(np.zeros((0, 2)))
        with pytest.raises(ShapeMismatch):
            MotionPayload.from_absolute(np.zeros((3, 3)))
        with pytest.raises(ShapeMismatch):
            MotionPayload.from_absolute(np.zeros((3, 2)), np.zeros((1, 3, 2)))

    def test_nonfinite(self):
        with pytest.raises(NonFinite):
            MotionPayload.from_absolute(np.array([[np.inf, 0.0]]))

    def test_immutable(self, rng):
        p = payload_for(StreamConfig(), rng)
        for arr in (p.mean_pos, p.offsets.coords, p.jacobians, p.expression):
            with pytest.raises(ValueError):
                arr[0] = 0

    def test_input_not_aliased(self):
        coords = np.zeros((2, 2))
        p = MotionPayload.from_absolute(coords)
        coords[0, 0] = 0.5
        assert p.absolute_coords()[0, 0] == 0.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 50), st.just(2)), elements=st.floats(-0.45, 0.45)))
    def test_mean_and_recompose(self, coords):
        p = MotionPayload.from_absolute(coords)
        assert np.max(np.abs(p.mean_pos - coords.mean(axis=0))) <= 1e-12
        assert np.max(np.abs(p.absolute_coords() - coords)) <= 1e-12


class TestGrids:
    def test_feature_map(self):
        fm = FeatureMap(np.zeros((3, 4, 5)))
        assert (fm.channels, fm.height, fm.width, fm.spatial) == (3, 4, 5, (4, 5))
        with pytest.raises(ShapeMismatch):
            FeatureMap(np.zeros((4, 5)))
        with pytest.raises(NonFinite):
            FeatureMap(np.full((1, 2, 2), np.nan))

    def test_flow_and_scalar(self):
        assert FlowField(np.full((3, 4, 2), 7.0)).spatial == (3, 4)  # out-of-range allowed
        with pytest.raises(ShapeMismatch):
            FlowField(np.zeros((3, 4, 3)))
        with pytest.raises(NonFinite):
            FlowField(np.full((2, 2, 2), np.inf))
        assert ScalarMap(np.zeros((3, 4))).spatial == (3, 4)
        with pytest.raises(ShapeMismatch):
            ScalarMap(np.zeros((1, 3, 4)))

    def test_readonly_copy(self):
        src = np.zeros((1, 2, 2))
        fm = FeatureMap(src)
        src[0, 0, 0] = 1.0
        assert fm.data[0, 0, 0] == 0.0
        with pytest.raises(ValueError):
            fm.data[0, 0, 0] = 1.0


class TestKeypoints:
    def test_make_and_eq(self):
        a = KeypointSet.make([[0, 0], [1, 1]], [[[1, 0], [0, 1]]])
        b = KeypointSet.make([[0, 0], [1, 1]], [[[1, 0], [0, 1]]])
        assert a == b and len(a) == 2
        assert a != KeypointSet.make([[0, 0], [1, 1]])
        with pytest.raises(ShapeMismatch):
            KeypointSet.make([0, 0])

    def test_validate_keypoints(self):
        cfg = StreamConfig(n_sup=1, n_unsup=1)
        validate_keypoints(KeypointSet.make(np.zeros((2, 2)), np.zeros((1, 2, 2))), cfg)
        with pytest.raises(ShapeMismatch):
            validate_keypoints(KeypointSet.make(np.zeros((2, 2))), cfg)

    def test_reference_pose_mean(self):
        a = KeypointSet.make([[0.0, 0.0]])
        b = KeypointSet.make([[0.2, -0.4]])
        assert ReferencePose.mean_layout([a, b]).keypoints.coords.tolist() == [[0.1, -0.2]]
        with pytest.raises(EmptyInput):
            ReferencePose.mean_layout([])


class TestPoseTrack:
    def test_from_yaws(self):
        t = PoseTrack.from_yaws([0.1, -0.2], [True, False])
        assert t.yaws.tolist() == [0.1, -0.2]
        assert t.eyes_open.tolist() == [True, False]
        assert len(t.payloads) == 2

    def test_strictly_increasing(self):
        t = PoseTrack.from_yaws([0.0, 0.0])
        f0, f1 = t.frames
        with pytest.raises(RangeViolation):
            PoseTrack(t.cfg, (f1, TrackFrame(1, 0.0, True, f0.payload)))

    def test_finite_yaw(self):
        p = PoseTrack.from_yaws([0.0]).frames[0].payload
        with pytest.raises(NonFinite):
            PoseTrack(StreamConfig(n_sup=1, n_unsup=0, with_jacobians=False, M=0), (TrackFrame(0, float("inf"), True, p),))
