"""Quantization and entropy coding of motion payload streams."""

from .frame import (
    CodecState,
    FrameCodec,
    QuantizedPayload,
    ac_decode,
    ac_encode,
    decode_frame,
    delta_step,
    encode_frame,
    quantize_stream,
    train_prior,
)
from .prior import CONTEXTS, PriorModel, build_prior, context_id, uniform_prior
from .quant import DEFAULT_SPECS, FIELDS, FieldSpec, Layout, dequantize, quantize, raw_bits

__all__ = [
    "CONTEXTS", "CodecState", "DEFAULT_SPECS", "FIELDS", "FieldSpec", "FrameCodec", "Layout",
    "PriorModel", "QuantizedPayload", "ac_decode", "ac_encode", "build_prior", "context_id",
    "decode_frame", "delta_step", "dequantize", "encode_frame", "quantize", "quantize_stream",
    "raw_bits", "train_prior", "uniform_prior",
]
