"""Bit-exact binary serialization of a model (config + parameters).

Layout, all little-endian:

    magic   4 bytes  "EXPC"
    version u32      1
    variant u32      0 = conv, 1 = dense
    input   3 x u32  height, width, channels
    conv_channels    u32 count, then that many u32
    conv_strides     u32 count, then that many u32
    dense_hidden     u32 count, then that many u32
    num_classes      u32
    payload          float32 per learnable, layer order, weights then bias

The payload length must equal 4 * param_count(config) and every float must
be finite.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptionError, FormatError, UsageError
from .layers import (
    ConvLayer,
    DenseLayer,
    ModelConfig,
    ModelParams,
    check_params,
    layer_shapes,
    param_count,
)

MAGIC = b"EXPC"
VERSION = 1
_VARIANT_TAGS = {"conv": 0, "dense": 1}
_TAG_VARIANTS = {v: k for k, v in _VARIANT_TAGS.items()}


def _pack_u32s(values) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def _config_bytes(config: ModelConfig) -> bytes:
    parts = [
        MAGIC,
        _pack_u32s([VERSION, _VARIANT_TAGS[config.variant]]),
        _pack_u32s(config.input_size),
        _pack_u32s([len(config.conv_channels), *config.conv_channels]),
        _pack_u32s([len(config.conv_strides), *config.conv_strides]),
        _pack_u32s([len(config.dense_hidden), *config.dense_hidden]),
        _pack_u32s([config.num_classes]),
    ]
    return b"".join(parts)


def save_model(path: str, config: ModelConfig, params: ModelParams) -> None:
    """Write config and parameters; float64 params are narrowed to float32."""
    check_params(config, params)
    payload = b"".join(
        np.concatenate([p.weights.ravel(), p.bias.ravel()])
        .astype("<f4").tobytes()
        for p in params
    )
    with open(path, "wb") as fh:
        fh.write(_config_bytes(config))
        fh.write(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(
                f"file ends at byte {len(self.data)} while reading {what} "
                f"(needed {self.pos + n})"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u32_list(self, what: str) -> tuple[int, ...]:
        count = self.u32(f"{what} count")
        return struct.unpack(f"<{count}I", self.take(4 * count, what))


def load_model(path: str):
    """Read a model file back into (config, params), validating everything."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    tag = r.u32("variant")
    if tag not in _TAG_VARIANTS:
        raise FormatError(f"unknown variant tag {tag}")
    input_size = tuple(r.u32("input size") for _ in range(3))
    conv_channels = r.u32_list("conv channels")
    conv_strides = r.u32_list("conv strides")
    dense_hidden = r.u32_list("dense hidden")
    num_classes = r.u32("num_classes")
    try:
        config = ModelConfig(_TAG_VARIANTS[tag], input_size, conv_channels,
                             conv_strides, dense_hidden, num_classes)
    except UsageError as exc:
        raise FormatError(f"invalid config in model file: {exc}") from exc

    expected = 4 * param_count(config)
    remaining = len(data) - r.pos
    if remaining != expected:
        raise CorruptionError(
            f"payload is {remaining} bytes, expected {expected} for this config"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=r.pos).copy()
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise CorruptionError(f"non-finite parameter at index {bad}")

    params: ModelParams = []
    offset = 0
    n_conv = len(config.conv_channels) if config.variant == "conv" else 0
    for i, (w_shape, b_shape) in enumerate(layer_shapes(config)):
        w_n = int(np.prod(w_shape))
        b_n = int(np.prod(b_shape))
        weights = flat[offset:offset + w_n].reshape(w_shape)
        offset += w_n
        bias = flat[offset:offset + b_n].reshape(b_shape)
        offset += b_n
        if i < n_conv:
            params.append(ConvLayer(weights, bias, config.conv_strides[i]))
        else:
            params.append(DenseLayer(weights, bias))
    return config, params
