"""The twin networks: MM-V (village model) and MM-V-A (actual-case model with
the transferred, frozen ``V_conv2d_3`` branch)."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
import io

import numpy as np

from .nn import LayerSpec, Network, ShapeError
from .nn.weights import load_weights

DONOR_LAYER = "V_conv2d_3"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; defaults are the desk-scale choices documented in the README."""
    filters: tuple = (32, 32, 64, 64)
    kernel_size: int = 3
    padding: str = "same"
    pool_window: int = 2
    dense_units: int = 256
    dropout_conv: float = 0.1
    dropout_dense: float = 0.5
    bn_momentum: float = 0.9
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    patch_size: int = 64

    def __post_init__(self):
        if len(self.filters) != 4:
            raise ValueError("filters must list exactly 4 conv widths")


def config_to_text(config):
    cp = configparser.ConfigParser()
    cp["model"] = {
        k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        for k, v in asdict(config).items()
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_text(text):
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "model" not in cp:
        raise ValueError("model config has no [model] section")
    section = cp["model"]
    known = {f.name: f for f in fields(ModelConfig)}
    unknown = set(section) - set(known)
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    kwargs = {}
    defaults = ModelConfig()
    for key, raw in section.items():
        default = getattr(defaults, key)
        if isinstance(default, tuple):
            kwargs[key] = tuple(int(v) for v in raw.split(","))
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return ModelConfig(**kwargs)


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(config))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read())


def _conv(name, filters, config, **kw):
    return LayerSpec("conv2d", name, filters=filters, kernel_size=config.kernel_size,
                     padding=config.padding, activation="relu", **kw)


def _pool(name, config, **kw):
    return LayerSpec("maxpool2d", name, window=config.pool_window, stride=config.pool_window, **kw)


def _head(prefix, config):
    return [
        LayerSpec("batchnorm", f"{prefix}_batch_normalization", momentum=config.bn_momentum),
        LayerSpec("dropout", f"{prefix}_dropout_1", rate=config.dropout_conv),
        LayerSpec("flatten", f"{prefix}_flatten"),
        LayerSpec("dense", f"{prefix}_dense_1", units=config.dense_units,
                  activation=config.hidden_activation),
        LayerSpec("dropout", f"{prefix}_dropout_2", rate=config.dropout_dense),
        LayerSpec("dense", f"{prefix}_dense_2", units=1, activation=config.output_activation),
    ]


def mmv_layers(config, prefix="V"):
    f1, f2, f3, f4 = config.filters
    body = []
    for i, f in enumerate((f1, f2, f3, f4), start=1):
        body.append(_conv(f"{prefix}_conv2d_{i}", f, config))
        body.append(_pool(f"{prefix}_max_pooling2d_{i}", config))
    return body + _head(prefix, config)


def build_mmv(config=None, seed=0, prefix="V"):
    """MM-V: four relu conv layers alternating with max-pooling, then the
    batchnorm/dropout/dense classification head. Returns an initialised network."""
    config = config or ModelConfig()
    size = config.patch_size
    net = Network(mmv_layers(config, prefix), (size, size, 3), name="MM-V" if prefix == "V" else "MM-A")
    return net.init_params(np.random.default_rng(seed))


@dataclass(frozen=True)
class TransferBinding:
    donor_layer: str = DONOR_LAYER
    insertion_point: str = "A_max_pooling2d_2"
    recipient: str = "A_conv2d_3"
    merge: str = "A_concatenate"
    consumer: str = "A_conv2d_4"


def mmva_layers(config, donor_kernel_shape, binding=TransferBinding()):
    f1, f2, f3, f4 = config.filters
    k, _, cin, n = donor_kernel_shape
    if cin != f2:
        raise ShapeError(
            f"donor {binding.donor_layer} expects {cin} input channels but "
            f"A_conv2d_2 produces {f2}"
        )
    return [
        _conv("A_conv2d_1", f1, config),
        _pool("A_max_pooling2d_1", config),
        _conv("A_conv2d_2", f2, config),
        _pool(binding.insertion_point, config),
        _conv(binding.recipient, f3, config),
        LayerSpec("conv2d", binding.donor_layer, inputs=(binding.insertion_point,),
                  filters=n, kernel_size=k, padding=config.padding, activation="none",
                  use_bias=False, trainable=False),
        LayerSpec("concat", binding.merge, inputs=(binding.donor_layer, binding.recipient)),
        _pool("A_max_pooling2d_3", config),
        _conv(binding.consumer, f4, config),
        _pool("A_max_pooling2d_4", config),
    ] + _head("A", config)


def build_mmva(config=None, donor_weights=None, seed=0, binding=TransferBinding()):
    """MM-V-A: the MM-A stream plus the frozen transferred branch.

    ``donor_weights`` is a weights store (dict) or a path to a weights file
    holding ``V_conv2d_3/kernel``. The donor kernel is applied, without bias
    or activation, to the pooled output of ``A_conv2d_2`` and concatenated
    with ``A_conv2d_3`` ahead of ``A_conv2d_4``.
    """
    config = config or ModelConfig()
    if donor_weights is None:
        raise ValueError("MM-V-A needs donor weights")
    if not isinstance(donor_weights, dict):
        donor_weights = load_weights(donor_weights)
    key = f"{binding.donor_layer}/kernel"
    if key not in donor_weights:
        raise KeyError(f"donor weights have no layer {binding.donor_layer!r}")
    kernel = np.asarray(donor_weights[key], dtype=np.float32)
    size = config.patch_size
    net = Network(mmva_layers(config, kernel.shape, binding), (size, size, 3), name="MM-V-A")
    net.init_params(np.random.default_rng(seed))
    net.params[key] = kernel.copy()
    return net


def strip_transfer(net, binding=TransferBinding()):
    """The MM-A stream of an MM-V-A network with the transfer branch removed."""
    keep = []
    for spec in net.layers:
        if spec.name in (binding.donor_layer, binding.merge):
            continue
        keep.append(spec)
    return Network([LayerSpec(**{**asdict(s), "inputs": ()}) for s in keep], net.input_shape, "MM-A")


def junction_output(net, x, binding=TransferBinding()):
    """Output of the merge layer (the transferred feature map) for a batch."""
    from .nn.network import Network as _Net
    idx = [s.name for s in net.layers].index(binding.merge)
    head = _Net(net.layers[:idx + 1], net.input_shape, net.name + "-junction")
    head.params = {k: v for k, v in net.params.items() if k in head.param_shapes()}
    return head.forward(x)


def layer_counts(net):
    """Count layers by kind, plus the total under our counting convention
    (every entry of the layer list counts, the input does not)."""
    counts = {}
    for spec in net.layers:
        counts[spec.kind] = counts.get(spec.kind, 0) + 1
    counts["total"] = len(net.layers)
    return counts
