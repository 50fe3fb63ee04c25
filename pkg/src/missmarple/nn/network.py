"""A small layer graph: ordered layers, each reading one or more named inputs."""
from __future__ import annotations

import numpy as np

from . import layers as L
from .layers import ShapeError, Tape


class NonFiniteError(FloatingPointError):
    """A forward or backward tensor contained NaN or Inf."""


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class Network:
    """Layer list plus its parameter store.

    ``layers`` are evaluated in order. A layer with empty ``inputs`` reads the
    previous layer's output (or the network input for the first layer); the
    network input is addressable as ``"input"``. The last layer is the output.
    Shapes are checked when the network is built.

    ``params`` maps ``"<layer>/<param>"`` to an array. Forward passes in
    inference mode never mutate the network, so a built network can be shared
    between threads for prediction.
    """

    def __init__(self, layers, input_shape=(64, 64, 3), name="net", params=None):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = {"input": self.input_shape}
        self._sources = {}
        prev = "input"
        for spec in self.layers:
            if spec.name in self.shapes:
                raise ValueError(f"duplicate layer name {spec.name!r}")
            srcs = tuple(spec.inputs) or (prev,)
            for src in srcs:
                if src not in self.shapes:
                    raise ShapeError(f"{spec.name}: unknown input {src!r}")
            self._sources[spec.name] = srcs
            shape = L.output_shape(spec, [self.shapes[s] for s in srcs])
            if any(d < 1 for d in shape):
                raise ShapeError(f"{spec.name}: non-positive output shape {shape}")
            self.shapes[spec.name] = shape
            prev = spec.name
        self.params = {}
        if params is not None:
            self.load_params(params)

    # -- parameters ------------------------------------------------------

    def param_shapes(self):
        out = {}
        for spec in self.layers:
            in_shapes = [self.shapes[s] for s in self._sources[spec.name]]
            for pname, shape in L.param_shapes(spec, in_shapes).items():
                out[f"{spec.name}/{pname}"] = shape
        return out

    def init_params(self, rng, dtype=np.float32):
        self.params = {}
        for spec in self.layers:
            in_shapes = [self.shapes[s] for s in self._sources[spec.name]]
            for pname, arr in L.init_params(spec, in_shapes, rng, dtype).items():
                self.params[f"{spec.name}/{pname}"] = arr
        return self

    def load_params(self, store, strict=True):
        """Copy arrays from ``store`` after validating every shape."""
        expected = self.param_shapes()
        for key, shape in expected.items():
            if key not in store:
                if strict:
                    raise KeyError(f"{self.name}: missing parameter {key!r}")
                continue
            if tuple(store[key].shape) != shape:
                raise ShapeError(
                    f"{self.name}: parameter {key} has shape {tuple(store[key].shape)}, expected {shape}"
                )
        extra = set(store) - set(expected)
        if strict and extra:
            raise KeyError(f"{self.name}: unexpected parameters {sorted(extra)}")
        for key in expected:
            if key in store:
                self.params[key] = np.array(store[key], copy=True)
        return self

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def layer_params(self, name):
        prefix = name + "/"
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def trainable_keys(self):
        keys = []
        for spec in self.layers:
            if not spec.trainable:
                continue
            for pname in L.param_shapes(spec, [self.shapes[s] for s in self._sources[spec.name]]):
                if pname in L.GRAD_PARAMS:
                    keys.append(f"{spec.name}/{pname}")
        return keys

    def count_params(self, trainable_only=False):
        keys = self.trainable_keys() if trainable_only else self.param_shapes()
        shapes = self.param_shapes()
        return int(sum(np.prod(shapes[k]) for k in keys))

    def astype(self, dtype):
        net = Network(self.layers, self.input_shape, self.name)
        net.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return net

    # -- passes ----------------------------------------------------------

    def forward(self, x, training=False, rng=None, record=False, check=True):
        """Evaluate the network on a batch ``x`` of shape [B, *input_shape].

        In training mode dropout draws from ``rng`` and batchnorm moving
        statistics are updated in place. With ``record=True`` returns
        ``(output, tape)`` for :meth:`backward`.
        """
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.name}: input batch {x.shape} does not match {self.input_shape}")
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        tape = Tape() if record else None
        values = {"input": x}
        pending = {}
        for spec in self.layers:
            inputs = [values[s] for s in self._sources[spec.name]]
            out, updates = L.forward_layer(spec, self.layer_params(spec.name), inputs, training, rng, tape)
            if check:
                _check_finite(out, f"output of layer {spec.name}")
            if updates and spec.trainable:
                for pname, arr in updates.items():
                    pending[f"{spec.name}/{pname}"] = arr
            values[spec.name] = out
        for key, arr in pending.items():
            self.params[key] = arr
        if record:
            return out, tape
        return out

    def backward(self, tape, dout, from_logits=False, check=True):
        """Propagate ``dout`` (gradient w.r.t. the output) back through the tape.

        With ``from_logits`` the output layer's activation derivative is skipped,
        i.e. ``dout`` is taken to be the gradient w.r.t. its pre-activation.
        Returns (gradients w.r.t. parameters, gradient w.r.t. the input).
        """
        grads = {}
        upstream = {self.layers[-1].name: dout}
        last = self.layers[-1].name
        for spec in reversed(self.layers):
            g = upstream.pop(spec.name, None)
            if g is None:
                continue
            dins, pgrads = L.backward_layer(
                spec, self.layer_params(spec.name), tape.caches[spec.name], g,
                skip_activation=from_logits and spec.name == last,
            )
            for pname, arr in pgrads.items():
                key = f"{spec.name}/{pname}"
                if check:
                    _check_finite(arr, f"gradient of {key}")
                grads[key] = arr
            for src, d in zip(self._sources[spec.name], dins):
                upstream[src] = upstream[src] + d if src in upstream else d
        return grads, upstream.get("input")

    def predict(self, x, batch_size=64):
        """Sigmoid scores for a batch, shape [B]."""
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate(out).reshape(len(x), -1)[:, 0]

    def summary(self):
        lines = [f"{self.name}: input {self.input_shape}"]
        for spec in self.layers:
            srcs = ",".join(self._sources[spec.name])
            lines.append(f"  {spec.name:<16} {spec.kind:<10} <- {srcs:<22} {self.shapes[spec.name]}")
        return "\n".join(lines)
