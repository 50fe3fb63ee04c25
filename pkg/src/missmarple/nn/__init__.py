"""Minimal NHWC layer engine with reverse-mode gradients and RMSprop."""
from .layers import LayerSpec, ShapeError, conv2d_forward, maxpool_forward
from .network import Network, NonFiniteError
from .optim import RMSprop, bce_from_logits, loss_and_grads, train_step
from .gradcheck import gradient_check
from .weights import WeightsFormatError, load_weights, save_weights


def conv2d(x, kernel, bias=None, padding="valid", stride=1, activation="none", name="conv2d"):
    """Convolve a single HxWxC image (no batch axis)."""
    spec = LayerSpec("conv2d", name, filters=kernel.shape[3], kernel_size=kernel.shape[0],
                     stride=stride, padding=padding, activation=activation,
                     use_bias=bias is not None)
    return conv2d_forward(x[None], kernel, bias, spec)[0][0]


def maxpool2d(x, window=2, stride=2, name="maxpool2d"):
    """Max-pool a single HxWxC image (no batch axis)."""
    spec = LayerSpec("maxpool2d", name, window=window, stride=stride)
    return maxpool_forward(x[None], spec)[0][0]


__all__ = [
    "LayerSpec", "ShapeError", "Network", "NonFiniteError", "RMSprop", "bce_from_logits",
    "loss_and_grads", "train_step", "gradient_check", "WeightsFormatError", "load_weights",
    "save_weights", "conv2d", "maxpool2d",
]
