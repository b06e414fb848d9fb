"""Network layers with explicit forward and backward passes.

The two architectures are small sequential stacks over channels-last
tensors:

  conv variant:   [Conv(+ReLU)] x N -> global average pool -> FC -> softmax
  dense variant:  flatten -> [Dense(+ReLU)] x N -> FC -> softmax

Convolutions use fixed 3x3 kernels with zero "same" padding: the output
spatial extent is ceil(input / stride), and the total padding is split
with the smaller half on the leading edge. Forward passes are lowered to
patch-gathering plus one matrix multiply; backward passes are exact
gradients of sum(out * grad_out).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import ShapeError, UsageError
from .tensor import FLOAT32, Tensor, spatial_mean

KERNEL_SIZE = 3


@dataclass
class ConvLayer:
    """3x3 convolution parameters: weights (3, 3, c_in, c_out), bias (c_out,)."""

    weights: Tensor
    bias: Tensor
    stride: int = 1


@dataclass
class DenseLayer:
    """Fully-connected parameters: weights (n_in, n_out), bias (n_out,)."""

    weights: Tensor
    bias: Tensor


LayerParams = Union[ConvLayer, DenseLayer]
ModelParams = list


def default_conv_strides(n_layers: int) -> tuple[int, ...]:
    """Stride plan for a conv stack: all 1 except a final stride-2 layer."""
    if n_layers <= 1:
        return (1,) * n_layers
    return (1,) * (n_layers - 1) + (2,)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; parameter shapes derive from this alone."""

    variant: str = "conv"
    input_size: tuple[int, int, int] = (128, 128, 3)
    conv_channels: tuple[int, ...] = (768, 384)
    conv_strides: tuple[int, ...] = (1, 2)
    dense_hidden: tuple[int, ...] = (768,)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "conv_strides", tuple(int(v) for v in self.conv_strides))
        object.__setattr__(self, "dense_hidden", tuple(int(v) for v in self.dense_hidden))
        if self.variant not in ("conv", "dense"):
            raise UsageError(f"unknown variant {self.variant!r}")
        if self.num_classes != 2:
            raise UsageError("exactly two classes are supported")
        if len(self.input_size) != 3 or any(v < 1 for v in self.input_size):
            raise UsageError(f"bad input size {self.input_size}")
        if self.variant == "conv":
            if not self.conv_channels:
                raise UsageError("conv variant needs at least one conv layer")
            if len(self.conv_strides) != len(self.conv_channels):
                raise UsageError("conv_strides and conv_channels lengths differ")
            if any(c < 1 for c in self.conv_channels) or any(s < 1 for s in self.conv_strides):
                raise UsageError("conv channels and strides must be positive")
        if any(h < 1 for h in self.dense_hidden):
            raise UsageError("dense hidden sizes must be positive")


def _same_padding(extent: int, stride: int) -> tuple[int, int, int]:
    """(leading pad, trailing pad, output extent) for 3x3 "same" padding."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + KERNEL_SIZE - extent, 0)
    lead = total // 2
    return lead, total - lead, out


def conv_output_extent(extent: int, stride: int) -> int:
    return _same_padding(extent, stride)[2]


def _im2col(x: Tensor, stride: int):
    """Gather 3x3 patches into a (n*oh*ow, 9*c) matrix."""
    n, h, w, c = x.shape
    top, bottom, out_h = _same_padding(h, stride)
    left, right, out_w = _same_padding(w, stride)
    padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    cols = np.empty((n, out_h, out_w, KERNEL_SIZE, KERNEL_SIZE, c), dtype=x.dtype)
    for dy in range(KERNEL_SIZE):
        y_stop = dy + stride * out_h
        for dx in range(KERNEL_SIZE):
            x_stop = dx + stride * out_w
            cols[:, :, :, dy, dx, :] = padded[:, dy:y_stop:stride, dx:x_stop:stride, :]
    return cols.reshape(n * out_h * out_w, KERNEL_SIZE * KERNEL_SIZE * c), (out_h, out_w)


def _col2im(grad_cols: Tensor, x_shape: tuple, stride: int) -> Tensor:
    """Scatter-add patch gradients back onto the (padded) input grid."""
    n, h, w, c = x_shape
    top, bottom, out_h = _same_padding(h, stride)
    left, right, out_w = _same_padding(w, stride)
    grad_cols = grad_cols.reshape(n, out_h, out_w, KERNEL_SIZE, KERNEL_SIZE, c)
    padded = np.zeros((n, h + top + bottom, w + left + right, c), dtype=grad_cols.dtype)
    for dy in range(KERNEL_SIZE):
        y_stop = dy + stride * out_h
        for dx in range(KERNEL_SIZE):
            x_stop = dx + stride * out_w
            padded[:, dy:y_stop:stride, dx:x_stop:stride, :] += grad_cols[:, :, :, dy, dx, :]
    return padded[:, top:top + h, left:left + w, :]


def _check_conv_input(x: Tensor, layer: ConvLayer) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got shape {x.shape}")
    if x.shape[3] != layer.weights.shape[2]:
        raise ShapeError(
            f"input has {x.shape[3]} channels, layer expects {layer.weights.shape[2]}"
        )


def conv2d_forward(x: Tensor, layer: ConvLayer) -> Tensor:
    _check_conv_input(x, layer)
    c_out = layer.weights.shape[3]
    cols, (out_h, out_w) = _im2col(x, layer.stride)
    w_mat = layer.weights.reshape(KERNEL_SIZE * KERNEL_SIZE * x.shape[3], c_out)
    out = cols @ w_mat + layer.bias
    return out.reshape(x.shape[0], out_h, out_w, c_out)


def conv2d_backward(x: Tensor, layer: ConvLayer, grad_out: Tensor):
    """Gradients of sum(out * grad_out) w.r.t. (input, weights, bias)."""
    _check_conv_input(x, layer)
    n, _, _, c_in = x.shape
    c_out = layer.weights.shape[3]
    out_h = conv_output_extent(x.shape[1], layer.stride)
    out_w = conv_output_extent(x.shape[2], layer.stride)
    if grad_out.shape != (n, out_h, out_w, c_out):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != output shape {(n, out_h, out_w, c_out)}"
        )
    cols, _ = _im2col(x, layer.stride)
    g_mat = grad_out.reshape(n * out_h * out_w, c_out)
    grad_bias = g_mat.sum(axis=0)
    grad_weights = (cols.T @ g_mat).reshape(layer.weights.shape)
    w_mat = layer.weights.reshape(KERNEL_SIZE * KERNEL_SIZE * c_in, c_out)
    grad_input = _col2im(g_mat @ w_mat.T, x.shape, layer.stride)
    return grad_input, grad_weights, grad_bias


def relu_forward(t: Tensor) -> Tensor:
    return np.maximum(t, 0)


def relu_backward(t: Tensor, grad_out: Tensor) -> Tensor:
    # derivative at exactly 0 is defined as 0
    return np.where(t > 0, grad_out, t.dtype.type(0))


def global_avg_pool_forward(t: Tensor) -> Tensor:
    return spatial_mean(t)


def global_avg_pool_backward(t: Tensor, grad_out: Tensor) -> Tensor:
    n, h, w, c = t.shape
    if grad_out.shape != (n, c):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, c)}")
    spread = grad_out / grad_out.dtype.type(h * w)
    return np.broadcast_to(spread[:, None, None, :], t.shape).copy()


def dense_forward(x: Tensor, layer: DenseLayer) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"dense input must be rank 2, got shape {x.shape}")
    if x.shape[1] != layer.weights.shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} features, layer expects {layer.weights.shape[0]}"
        )
    return x @ layer.weights + layer.bias


def dense_backward(x: Tensor, layer: DenseLayer, grad_out: Tensor):
    """Gradients of sum(out * grad_out) w.r.t. (input, weights, bias)."""
    if grad_out.shape != (x.shape[0], layer.weights.shape[1]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != {(x.shape[0], layer.weights.shape[1])}"
        )
    grad_input = grad_out @ layer.weights.T
    grad_weights = x.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weights, grad_bias


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction stabilization."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax needs (n, k>=2) logits, got shape {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class ForwardCache:
    """Intermediates recorded by model_forward for the matching backward."""

    config: ModelConfig
    trace: list = field(default_factory=list)  # (op, param index or None, input)
    logits: Tensor | None = None


def _layer_plan(config: ModelConfig) -> list[tuple[str, int | None]]:
    plan: list[tuple[str, int | None]] = []
    idx = 0
    if config.variant == "conv":
        for _ in config.conv_channels:
            plan.append(("conv", idx))
            plan.append(("relu", None))
            idx += 1
        plan.append(("gap", None))
    else:
        plan.append(("flatten", None))
        for _ in config.dense_hidden:
            plan.append(("dense", idx))
            plan.append(("relu", None))
            idx += 1
    plan.append(("dense", idx))
    return plan


def layer_names(config: ModelConfig) -> list[str]:
    """One name per parameterized layer, in parameter order."""
    if config.variant == "conv":
        names = [f"conv{i + 1}" for i in range(len(config.conv_channels))]
    else:
        names = [f"dense{i + 1}" for i in range(len(config.dense_hidden))]
    return names + ["output"]


def layer_shapes(config: ModelConfig) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(weights shape, bias shape) per parameterized layer."""
    h, w, c = config.input_size
    shapes = []
    if config.variant == "conv":
        c_in = c
        for c_out in config.conv_channels:
            shapes.append(((KERNEL_SIZE, KERNEL_SIZE, c_in, c_out), (c_out,)))
            c_in = c_out
        n_in = config.conv_channels[-1]
    else:
        n_in = h * w * c
        for n_out in config.dense_hidden:
            shapes.append(((n_in, n_out), (n_out,)))
            n_in = n_out
    shapes.append(((n_in, config.num_classes), (config.num_classes,)))
    return shapes


def param_count(config: ModelConfig) -> int:
    """Exact number of scalar learnables (weights + biases)."""
    total = 0
    for w_shape, b_shape in layer_shapes(config):
        total += int(np.prod(w_shape)) + int(np.prod(b_shape))
    return total


def init_params(config: ModelConfig, seed: int, dtype=FLOAT32) -> ModelParams:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: ModelParams = []
    n_conv = len(config.conv_channels) if config.variant == "conv" else 0
    for i, (w_shape, b_shape) in enumerate(layer_shapes(config)):
        fan_in = int(np.prod(w_shape[:-1]))
        std = np.sqrt(2.0 / fan_in)
        weights = (rng.standard_normal(w_shape) * std).astype(dtype)
        bias = np.zeros(b_shape, dtype=dtype)
        if i < n_conv:
            params.append(ConvLayer(weights, bias, config.conv_strides[i]))
        else:
            params.append(DenseLayer(weights, bias))
    return params


def flatten_params(params: ModelParams) -> Tensor:
    """All learnables as one flat vector, weights before bias per layer."""
    return np.concatenate([np.concatenate([p.weights.ravel(), p.bias.ravel()]) for p in params])


def check_params(config: ModelConfig, params: ModelParams) -> None:
    shapes = layer_shapes(config)
    if len(params) != len(shapes):
        raise UsageError(f"expected {len(shapes)} parameterized layers, got {len(params)}")
    n_conv = len(config.conv_channels) if config.variant == "conv" else 0
    for i, (p, (w_shape, b_shape)) in enumerate(zip(params, shapes)):
        want = ConvLayer if i < n_conv else DenseLayer
        if not isinstance(p, want):
            raise UsageError(f"layer {i} is {type(p).__name__}, expected {want.__name__}")
        if tuple(p.weights.shape) != w_shape or tuple(p.bias.shape) != b_shape:
            raise UsageError(
                f"layer {i} has shapes {p.weights.shape}/{p.bias.shape}, "
                f"expected {w_shape}/{b_shape}"
            )
        if isinstance(p, ConvLayer) and p.stride != config.conv_strides[i]:
            raise UsageError(f"layer {i} stride {p.stride} != config {config.conv_strides[i]}")


def model_forward(config: ModelConfig, params: ModelParams, batch: Tensor):
    """Run the stack on a (n, h, w, c) batch; returns (probabilities, cache)."""
    check_params(config, params)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != config.input_size:
        raise ShapeError(
            f"batch shape {batch.shape} does not match input size {config.input_size}"
        )
    cache = ForwardCache(config)
    x = batch
    for op, idx in _layer_plan(config):
        cache.trace.append((op, idx, x))
        if op == "conv":
            x = conv2d_forward(x, params[idx])
        elif op == "dense":
            x = dense_forward(x, params[idx])
        elif op == "relu":
            x = relu_forward(x)
        elif op == "gap":
            x = global_avg_pool_forward(x)
        else:  # flatten
            x = x.reshape(x.shape[0], -1)
    cache.logits = x
    return softmax(x), cache


def model_backward(config: ModelConfig, params: ModelParams, cache: ForwardCache,
                   grad_logits: Tensor) -> ModelParams:
    """Parameter gradients of the loss whose logit-gradient is grad_logits."""
    check_params(config, params)
    if cache.config != config or cache.logits is None:
        raise UsageError("cache does not belong to this model")
    if grad_logits.shape != cache.logits.shape:
        raise UsageError(
            f"grad_logits shape {grad_logits.shape} != logits shape {cache.logits.shape}"
        )
    grads: ModelParams = [None] * len(params)
    g = grad_logits
    for op, idx, x in reversed(cache.trace):
        if op == "conv":
            g, gw, gb = conv2d_backward(x, params[idx], g)
            grads[idx] = ConvLayer(gw, gb, params[idx].stride)
        elif op == "dense":
            g, gw, gb = dense_backward(x, params[idx], g)
            grads[idx] = DenseLayer(gw, gb)
        elif op == "relu":
            g = relu_backward(x, g)
        elif op == "gap":
            g = global_avg_pool_backward(x, g)
        else:  # flatten
            g = g.reshape(x.shape)
    return grads
