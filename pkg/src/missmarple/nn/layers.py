"""Layer definitions and their forward/backward rules.

Tensors are plain ``numpy`` arrays in NHWC layout with a leading batch axis.
Every rule is dtype-preserving so the same code runs in float32 for training
and in float64 for gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("conv2d", "maxpool2d", "batchnorm", "dropout", "flatten", "dense", "concat")
ACTIVATIONS = ("relu", "sigmoid", "none")


class ShapeError(ValueError):
    """Raised when a layer receives an input of the wrong shape."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    inputs: tuple = ()
    filters: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: str = "same"
    activation: str = "none"
    use_bias: bool = True
    trainable: bool = True
    window: int = 2
    rate: float = 0.0
    units: int = 0
    momentum: float = 0.99
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"{self.name}: unknown activation {self.activation!r}")
        if self.kind == "conv2d":
            if self.kernel_size < 1 or self.filters < 1 or self.stride < 1:
                raise ValueError(f"{self.name}: conv needs kernel_size, filters, stride >= 1")
            if self.padding not in ("same", "valid"):
                raise ValueError(f"{self.name}: padding must be 'same' or 'valid'")
        if self.kind == "maxpool2d" and (self.window < 2 or self.stride < 1):
            raise ValueError(f"{self.name}: maxpool window must be >= 2")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"{self.name}: dropout rate must be in [0, 1)")
        if self.kind == "dense" and self.units < 1:
            raise ValueError(f"{self.name}: dense needs units >= 1")

    @property
    def has_params(self):
        return self.kind in ("conv2d", "dense", "batchnorm")


def same_padding(n, k, s):
    """Return (pad_before, pad_after, out_size) for TF-style 'same' padding."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2, out


def output_shape(spec, in_shapes):
    """Shape algebra for one layer (shapes exclude the batch axis)."""
    if spec.kind == "concat":
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if s[:-1] != first[:-1]:
                raise ShapeError(f"{spec.name}: cannot concatenate {first} and {s}")
        return first[:-1] + (sum(s[-1] for s in in_shapes),)
    if len(in_shapes) != 1:
        raise ShapeError(f"{spec.name}: expects one input, got {len(in_shapes)}")
    shape = in_shapes[0]
    if spec.kind == "conv2d":
        if len(shape) != 3:
            raise ShapeError(f"{spec.name}: conv2d needs HxWxC input, got {shape}")
        h, w, _ = shape
        k, s = spec.kernel_size, spec.stride
        if spec.padding == "same":
            ho, wo = same_padding(h, k, s)[2], same_padding(w, k, s)[2]
        else:
            if h < k or w < k:
                raise ShapeError(f"{spec.name}: input {shape} smaller than kernel {k}x{k}")
            ho, wo = (h - k) // s + 1, (w - k) // s + 1
        return (ho, wo, spec.filters)
    if spec.kind == "maxpool2d":
        if len(shape) != 3:
            raise ShapeError(f"{spec.name}: maxpool2d needs HxWxC input, got {shape}")
        h, w, c = shape
        if h < spec.window or w < spec.window:
            raise ShapeError(f"{spec.name}: window {spec.window} larger than input {shape}")
        return ((h - spec.window) // spec.stride + 1, (w - spec.window) // spec.stride + 1, c)
    if spec.kind in ("batchnorm", "dropout"):
        return shape
    if spec.kind == "flatten":
        return (math.prod(shape),)
    if spec.kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"{spec.name}: dense needs a flat input, got {shape}")
        return (spec.units,)
    raise ShapeError(f"{spec.name}: unhandled kind {spec.kind}")


def param_shapes(spec, in_shapes):
    """Named parameter shapes for a layer, in storage order."""
    if spec.kind == "conv2d":
        cin = in_shapes[0][-1]
        shapes = {"kernel": (spec.kernel_size, spec.kernel_size, cin, spec.filters)}
        if spec.use_bias:
            shapes["bias"] = (spec.filters,)
        return shapes
    if spec.kind == "dense":
        shapes = {"kernel": (in_shapes[0][0], spec.units)}
        if spec.use_bias:
            shapes["bias"] = (spec.units,)
        return shapes
    if spec.kind == "batchnorm":
        c = (in_shapes[0][-1],)
        return {"gamma": c, "beta": c, "moving_mean": c, "moving_variance": c}
    return {}


# parameters updated by the optimizer (moving statistics are not)
GRAD_PARAMS = {"kernel", "bias", "gamma", "beta"}


def init_params(spec, in_shapes, rng, dtype=np.float32):
    out = {}
    for pname, shape in param_shapes(spec, in_shapes).items():
        if pname == "kernel":
            if spec.kind == "conv2d":
                k = spec.kernel_size
                fan_in, fan_out = k * k * shape[2], k * k * shape[3]
            else:
                fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            out[pname] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif pname in ("gamma", "moving_variance"):
            out[pname] = np.ones(shape, dtype=dtype)
        else:
            out[pname] = np.zeros(shape, dtype=dtype)
    return out


# -- activations ---------------------------------------------------------

def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def activation_grad(name, z, a, dout):
    if name == "relu":
        return dout * (z > 0)
    if name == "sigmoid":
        return dout * a * (1 - a)
    return dout


# -- convolution ---------------------------------------------------------

def _pad_input(x, spec):
    if spec.padding == "valid":
        return x, (0, 0, 0, 0)
    k, s = spec.kernel_size, spec.stride
    top, bottom, _ = same_padding(x.shape[1], k, s)
    left, right, _ = same_padding(x.shape[2], k, s)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, (top, bottom, left, right)


def conv2d_forward(x, kernel, bias, spec):
    """Cross-correlation of an NHWC batch with a [k, k, Cin, N] kernel.

    Sums are accumulated in float64 and cast back to the input dtype.
    """
    k, s = spec.kernel_size, spec.stride
    if x.shape[-1] != kernel.shape[2]:
        raise ShapeError(
            f"{spec.name}: input shape {x.shape[1:]} does not match kernel {kernel.shape}"
        )
    xp, pads = _pad_input(x, spec)
    if xp.shape[1] < k or xp.shape[2] < k:
        raise ShapeError(f"{spec.name}: input {x.shape[1:]} smaller than kernel {kernel.shape}")
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    b, ho, wo = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, -1).astype(np.float64)
    n = kernel.shape[3]
    z = cols @ kernel.reshape(-1, n).astype(np.float64)
    if bias is not None:
        z += bias
    z = z.reshape(b, ho, wo, n).astype(x.dtype)
    a = activate(spec.activation, z)
    return a, (cols, xp.shape, pads, z, a)


def conv2d_backward(dout, kernel, cache, spec):
    cols, padded_shape, pads, z, a = cache
    k, s = spec.kernel_size, spec.stride
    dz = activation_grad(spec.activation, z, a, dout)
    b, ho, wo, n = dz.shape
    dz2 = dz.reshape(-1, n).astype(np.float64)
    grads = {"kernel": (cols.T @ dz2).reshape(kernel.shape).astype(dout.dtype)}
    if spec.use_bias:
        grads["bias"] = dz2.sum(axis=0).astype(dout.dtype)
    cin = kernel.shape[2]
    dcols = (dz2 @ kernel.reshape(-1, n).T.astype(np.float64)).reshape(b, ho, wo, k, k, cin)
    dxp = np.zeros(padded_shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
    top, bottom, left, right = pads
    dx = dxp[:, top:padded_shape[1] - bottom, left:padded_shape[2] - right, :]
    return dx.astype(dout.dtype), grads


# -- pooling -------------------------------------------------------------

def maxpool_forward(x, spec):
    w, s = spec.window, spec.stride
    if x.shape[1] < w or x.shape[2] < w:
        raise ShapeError(f"{spec.name}: window {w} larger than input {x.shape[1:]}")
    win = sliding_window_view(x, (w, w), axis=(1, 2))[:, ::s, ::s]
    b, ho, wo, c = win.shape[:4]
    flat = win.reshape(b, ho, wo, c, w * w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool_backward(dout, cache, spec):
    in_shape, arg = cache
    w, s = spec.window, spec.stride
    ho, wo = dout.shape[1:3]
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for idx in range(w * w):
        i, j = divmod(idx, w)
        dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dout * (arg == idx)
    return dx


# -- batch normalisation -------------------------------------------------

def batchnorm_forward(x, params, spec, training):
    axes = tuple(range(x.ndim - 1))
    gamma, beta = params["gamma"], params["beta"]
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = params["moving_mean"], params["moving_variance"]
    inv_std = (1.0 / np.sqrt(var + spec.epsilon)).astype(x.dtype)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    updates = None
    if training:
        m = spec.momentum
        updates = {
            "moving_mean": (m * params["moving_mean"] + (1 - m) * mean).astype(x.dtype),
            "moving_variance": (m * params["moving_variance"] + (1 - m) * var).astype(x.dtype),
        }
    return out, (xhat, inv_std, training), updates


def batchnorm_backward(dout, params, cache):
    xhat, inv_std, training = cache
    axes = tuple(range(dout.ndim - 1))
    grads = {"beta": dout.sum(axis=axes), "gamma": (dout * xhat).sum(axis=axes)}
    dxhat = dout * params["gamma"]
    if not training:
        return dxhat * inv_std, grads
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx.astype(dout.dtype), grads


# -- dense ---------------------------------------------------------------

def dense_forward(x, kernel, bias, spec):
    if x.ndim != 2 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"{spec.name}: input shape {x.shape[1:]} does not match kernel {kernel.shape}")
    z = x @ kernel
    if bias is not None:
        z = z + bias
    a = activate(spec.activation, z)
    return a, (x, z, a)


def dense_backward(dout, kernel, cache, spec, skip_activation=False):
    x, z, a = cache
    dz = dout if skip_activation else activation_grad(spec.activation, z, a, dout)
    grads = {"kernel": x.T @ dz}
    if spec.use_bias:
        grads["bias"] = dz.sum(axis=0)
    return dz @ kernel.T, grads


@dataclass
class Tape:
    """Per-call record of layer caches needed by the backward pass."""
    caches: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    logits: np.ndarray | None = None


def forward_layer(spec, params, inputs, training, rng, tape):
    """Run one layer; returns (output, moving-statistic updates or None)."""
    x = inputs[0]
    updates = None
    if spec.kind == "conv2d":
        out, cache = conv2d_forward(x, params["kernel"], params.get("bias"), spec)
        if tape is not None:
            tape.logits = cache[3]
    elif spec.kind == "dense":
        out, cache = dense_forward(x, params["kernel"], params.get("bias"), spec)
        if tape is not None:
            tape.logits = cache[1]
    elif spec.kind == "maxpool2d":
        out, cache = maxpool_forward(x, spec)
    elif spec.kind == "batchnorm":
        out, cache, updates = batchnorm_forward(x, params, spec, training)
    elif spec.kind == "dropout":
        if training and spec.rate > 0:
            keep = (rng.random(x.shape) >= spec.rate).astype(x.dtype) / x.dtype.type(1 - spec.rate)
            out, cache = x * keep, keep
        else:
            out, cache = x, None
    elif spec.kind == "flatten":
        out, cache = x.reshape(x.shape[0], -1), x.shape
    else:  # concat
        out, cache = np.concatenate(inputs, axis=-1), [a.shape[-1] for a in inputs]
    if tape is not None:
        tape.caches[spec.name] = cache
    return out, updates


def backward_layer(spec, params, cache, dout, skip_activation=False):
    """Returns (list of input gradients, parameter gradients)."""
    if spec.kind == "conv2d":
        if skip_activation:
            spec = _no_activation(spec)
        dx, grads = conv2d_backward(dout, params["kernel"], cache, spec)
        return [dx], grads
    if spec.kind == "dense":
        dx, grads = dense_backward(dout, params["kernel"], cache, spec, skip_activation)
        return [dx], grads
    if spec.kind == "maxpool2d":
        return [maxpool_backward(dout, cache, spec)], {}
    if spec.kind == "batchnorm":
        dx, grads = batchnorm_backward(dout, params, cache)
        return [dx], grads
    if spec.kind == "dropout":
        return [dout if cache is None else dout * cache], {}
    if spec.kind == "flatten":
        return [dout.reshape(cache)], {}
    splits = np.cumsum(cache)[:-1]
    return list(np.split(dout, splits, axis=-1)), {}


def _no_activation(spec):
    from dataclasses import replace
    return replace(spec, activation="none")
