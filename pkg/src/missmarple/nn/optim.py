"""RMSprop, the binary cross-entropy loss and a single training step."""
from __future__ import annotations

import numpy as np

from .network import NonFiniteError


class RMSprop:
    """RMSprop with a per-parameter mean-squared-gradient cache.

    cache <- rho * cache + (1 - rho) * g**2
    w     <- w - lr * g / (sqrt(cache) + eps)
    """

    def __init__(self, lr=1e-4, rho=0.9, eps=1e-7):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.cache = {}

    def step(self, params, grads, keys):
        """Update ``params[k]`` in place for every ``k`` in ``keys``."""
        for k in keys:
            g = grads[k]
            p = params[k]
            c = self.cache.get(k)
            if c is None:
                c = np.zeros_like(p)
            c = self.rho * c + (1 - self.rho) * g * g
            self.cache[k] = c.astype(p.dtype)
            params[k] = (p - self.lr * g / (np.sqrt(c) + self.eps)).astype(p.dtype)


def bce_from_logits(z, y):
    """Mean binary cross-entropy of sigmoid(z) against labels y, and d/dz."""
    z64 = z.astype(np.float64).reshape(-1)
    y64 = np.asarray(y, dtype=np.float64).reshape(-1)
    loss = np.mean(np.maximum(z64, 0) - z64 * y64 + np.log1p(np.exp(-np.abs(z64))))
    p = 1.0 / (1.0 + np.exp(-z64))
    dz = (p - y64) / len(y64)
    return float(loss), dz.reshape(z.shape).astype(z.dtype)


def mse(out, y):
    """Mean squared error and its gradient w.r.t. ``out``."""
    diff = out.astype(np.float64).reshape(-1) - np.asarray(y, dtype=np.float64).reshape(-1)
    loss = np.mean(diff ** 2)
    return float(loss), (2 * diff / len(diff)).reshape(out.shape).astype(out.dtype)


def loss_and_grads(net, x, y, loss="bce", training=False, rng=None):
    """Forward + backward. Returns (loss, parameter gradients, output)."""
    out, tape = net.forward(x, training=training, rng=rng, record=True)
    if loss == "bce":
        value, dlogits = bce_from_logits(tape.logits, y)
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss from output of layer {net.layers[-1].name}")
        grads, _ = net.backward(tape, dlogits, from_logits=True)
    elif loss == "mse":
        value, dout = mse(out, y)
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss from output of layer {net.layers[-1].name}")
        grads, _ = net.backward(tape, dout)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, grads, out


def train_step(net, x, y, opt, rng):
    """One RMSprop step on a batch; returns (loss, batch accuracy).

    Only the network's trainable parameters are written. Batchnorm moving
    statistics are refreshed and dropout masks are drawn from ``rng``.
    """
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    value, grads, out = loss_and_grads(net, x, y, training=True, rng=rng)
    opt.step(net.params, grads, net.trainable_keys())
    acc = float(np.mean((out.reshape(-1) > 0.5) == (y.reshape(-1) == 1)))
    return value, acc
