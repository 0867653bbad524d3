import io

import numpy as np
import pytest

from fzstream import trackio
from fzstream.core import PRESETS, StreamConfig
from fzstream.errors import TrackParseError
from fzstream.synth import gen_track


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip(name):
    track = gen_track(20, seed=3, cfg=PRESETS[name])
    again = trackio.loads(trackio.dumps(track))
    assert again.cfg == track.cfg
    assert len(again) == len(track)
    for a, b in zip(track, again):
        assert (a.frame_index, a.yaw, a.eyes_open) == (b.frame_index, b.yaw, b.eyes_open)
        # the mean is re-derived on reading, so offsets may move by an ulp
        assert np.max(np.abs(a.payload.absolute_coords() - b.payload.absolute_coords())) <= 1e-12
        assert a.payload.offsets.jacobians is None or np.array_equal(a.payload.jacobians, b.payload.jacobians)
        assert np.array_equal(a.payload.expression, b.payload.expression)


def test_header_format():
    assert trackio.format_header(StreamConfig()) == "#FZTRACK v1 n_sup=33 n_unsup=10 jac=1 M=16"


def test_file_round_trip(tmp_path):
    track = gen_track(5, seed=1)
    path = tmp_path / "t.trk"
    trackio.write_track(track, path)
    assert trackio.read_track(path).yaws.tolist() == track.yaws.tolist()


def test_base_config_supplies_rest():
    text = trackio.dumps(gen_track(3, seed=1))
    t = trackio.loads(text, StreamConfig(fps=30.0, keyframe_interval=7))
    assert t.cfg.fps == 30.0 and t.cfg.keyframe_interval == 7


@pytest.mark.parametrize(
    "text,line",
    [
        ("", 1),
        ("#FZTRACK v2 n_sup=1 n_unsup=0 jac=0 M=0\n", 1),
        ("#FZTRACK v1 n_sup=1 n_unsup=0 jac=0\n", 1),
        ("#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n0 0.0 1 0.1 0.2\n1 0.0 1 0.1\n", 3),
        ("#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n0 0.0 1 0.1 abc\n", 2),
        ("#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n0 0.0 2 0.1 0.2\n", 2),
        ("#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n0 0.0 1 nan 0.2\n", 2),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(TrackParseError) as exc:
        trackio.loads(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_non_increasing_index():
    text = "#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n1 0.0 1 0.1 0.2\n1 0.0 1 0.1 0.2\n"
    with pytest.raises(TrackParseError):
        trackio.loads(text)


def test_blank_and_comment_lines_skipped():
    text = "#FZTRACK v1 n_sup=1 n_unsup=0 jac=0 M=0\n\n# note\n0 0.5 0 0.1 0.2\n"
    t = trackio.loads(text)
    assert len(t) == 1 and t[0].yaw == 0.5 and not t[0].eyes_open


def test_stream_write():
    buf = io.StringIO()
    trackio.write_track(gen_track(2, seed=0), buf)
    assert buf.getvalue().startswith("#FZTRACK v1")
