"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

import numpy as np

from .optim import bce_from_logits, loss_and_grads, mse


def _loss(net, x, y, loss):
    out, tape = net.forward(x, record=True)
    if loss == "bce":
        return bce_from_logits(tape.logits, y)[0]
    return mse(out, y)[0]


def gradient_check(net, x, y, h=1e-3, loss="bce", floor=1e-6, keys=None):
    """Worst relative error between analytic and central-difference gradients.

    Runs in inference mode (dropout off, batchnorm on moving statistics) on a
    float64 copy of ``net``. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps entries that are zero
    on both sides from dominating.
    """
    net = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, grads, _ = loss_and_grads(net, x, y, loss=loss)
    worst = 0.0
    for key in keys or net.trainable_keys():
        p = net.params[key]
        flat = p.reshape(-1)
        analytic = grads[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(net, x, y, loss)
            flat[i] = orig - h
            down = _loss(net, x, y, loss)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
