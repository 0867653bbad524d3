"""Keypoint-stream codec and multi-source frontalization kernels for low-bitrate face video."""

from .core import PRESETS, KeypointSet, MotionPayload, PoseTrack, StreamConfig

__version__ = "0.1.0"

__all__ = ["PRESETS", "KeypointSet", "MotionPayload", "PoseTrack", "StreamConfig"]
