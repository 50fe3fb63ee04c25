from dataclasses import replace

import numpy as np
import pytest

from missmarple.model import (DONOR_LAYER, ModelConfig, build_mmv, build_mmva, config_from_text,
                              config_to_text, junction_output, layer_counts, load_config,
                              save_config, strip_transfer)
from missmarple.nn import Network, RMSprop, ShapeError, WeightsFormatError, train_step
from missmarple.nn.weights import dumps_weights, load_weights, loads_weights, save_weights

from oracles import conv_same_loops, eq1_junction, param_count

SMALL = ModelConfig(filters=(4, 4, 8, 8), dense_units=8)


def donor_for(config, seed=5):
    f2, f3 = config.filters[1], config.filters[2]
    rng = np.random.default_rng(seed)
    return {f"{DONOR_LAYER}/kernel": rng.standard_normal((3, 3, f2, f3)).astype(np.float32) * 0.1}


def junction_subnet(net, size):
    """The transfer junction of an MM-V-A net, fed directly with an F2 map."""
    names = ("A_conv2d_3", DONOR_LAYER, "A_concatenate")
    specs = [net.layer(n) for n in names]
    specs = [replace(s, inputs=("input",)) if s.kind == "conv2d" else s for s in specs]
    f2 = net.shapes["A_max_pooling2d_2"][-1]
    sub = Network(specs, (size, size, f2))
    sub.params = {k: v for k, v in net.params.items() if k in sub.param_shapes()}
    return sub


# -- MM-V ---------------------------------------------------------------------

def test_mmv_spatial_trace():
    net = build_mmv()
    sides = [net.shapes[f"V_max_pooling2d_{i}"][0] for i in range(1, 5)]
    assert net.shapes["input"] == (64, 64, 3)
    assert [net.shapes[f"V_conv2d_{i}"][0] for i in range(1, 5)] == [64, 32, 16, 8]
    assert sides == [32, 16, 8, 4]
    assert net.shapes["V_dense_2"] == (1,)


def test_mmv_layer_order_and_names():
    net = build_mmv()
    convs = [s.name for s in net.layers if s.kind == "conv2d"]
    assert convs == ["V_conv2d_1", "V_conv2d_2", "V_conv2d_3", "V_conv2d_4"]
    kinds = [s.kind for s in net.layers]
    assert kinds == ["conv2d", "maxpool2d"] * 4 + ["batchnorm", "dropout", "flatten", "dense",
                                                   "dropout", "dense"]
    rates = [s.rate for s in net.layers if s.kind == "dropout"]
    assert rates == [0.1, 0.5]
    assert all(s.activation == "relu" for s in net.layers if s.kind == "conv2d")
    assert net.layers[-1].activation == "sigmoid"


def test_mmv_param_count_matches_closed_form():
    net = build_mmv()
    expected = param_count((32, 32, 64, 64), 3, 3, 256, 4 * 4 * 64, 64)
    assert net.count_params() == expected == 328_481


def test_nonpositive_spatial_dims_rejected_at_build():
    with pytest.raises(ShapeError):
        build_mmv(ModelConfig(patch_size=8))


# -- MM-V-A -------------------------------------------------------------------

def test_mmva_structure():
    net = build_mmva(donor_weights=donor_for(ModelConfig()))
    convs = [s for s in net.layers if s.kind == "conv2d"]
    assert len(convs) == 5
    assert len([s for s in net.layers if s.kind == "maxpool2d"]) == 4
    frozen = net.layer(DONOR_LAYER)
    assert (frozen.trainable, frozen.use_bias, frozen.activation) == (False, False, "none")
    assert net.shapes["A_concatenate"] == (16, 16, 128)
    assert net.layer("A_conv2d_4").inputs == () and net.shapes["A_conv2d_4"] == (8, 8, 64)
    assert f"{DONOR_LAYER}/kernel" not in net.trainable_keys()


def test_conv_count_twin_total_is_nine():
    v = build_mmv(SMALL)
    va = build_mmva(SMALL, donor_for(SMALL))
    assert layer_counts(v)["conv2d"] + layer_counts(va)["conv2d"] == 9
    assert layer_counts(v)["total"] == 14 and layer_counts(va)["total"] == 16


def test_twin_property():
    v = build_mmv(SMALL)
    a = strip_transfer(build_mmva(SMALL, donor_for(SMALL)))
    assert [s.kind for s in v.layers] == [s.kind for s in a.layers]
    assert [v.shapes[s.name] for s in v.layers] == [a.shapes[s.name] for s in a.layers]
    assert v.count_params() == a.count_params()


def test_donor_missing_and_mismatch():
    with pytest.raises(KeyError, match=DONOR_LAYER):
        build_mmva(SMALL, {"V_conv2d_2/kernel": np.zeros((3, 3, 4, 4), np.float32)})
    with pytest.raises(ShapeError, match="input channels"):
        build_mmva(SMALL, {f"{DONOR_LAYER}/kernel": np.zeros((3, 3, 5, 8), np.float32)})
    with pytest.raises(ValueError):
        build_mmva(SMALL, None)


def test_junction_equals_eq1_loop_oracle():
    # one 16x16 map checked against the nested-loop convolution
    net = build_mmva(SMALL, donor_for(SMALL))
    sub = junction_subnet(net, 16)
    f2 = np.random.default_rng(0).random((1, 16, 16, 4)).astype(np.float32)
    got = sub.forward(f2)[0]
    p = net.params
    transfer = conv_same_loops(f2[0], p[f"{DONOR_LAYER}/kernel"])
    own = conv_same_loops(f2[0], p["A_conv2d_3/kernel"], p["A_conv2d_3/bias"], relu=True)
    np.testing.assert_allclose(got, np.concatenate([transfer, own], -1), atol=1e-5)


def test_junction_equals_eq1_on_network_path():
    net = build_mmva(SMALL, donor_for(SMALL), seed=3)
    x = np.random.default_rng(1).random((6, 64, 64, 3)).astype(np.float32)
    upto = Network(net.layers[:4], net.input_shape)
    upto.params = {k: v for k, v in net.params.items() if k in upto.param_shapes()}
    f2 = upto.forward(x)
    p = net.params
    want = eq1_junction(f2, p[f"{DONOR_LAYER}/kernel"], p["A_conv2d_3/kernel"], p["A_conv2d_3/bias"])
    got = junction_output(net, x)
    assert np.max(np.abs(got - want)) <= 1e-5


def test_frozen_branch_unchanged_after_100_steps():
    net = build_mmva(SMALL, donor_for(SMALL), seed=1)
    before = net.params[f"{DONOR_LAYER}/kernel"].tobytes()
    rng = np.random.default_rng(0)
    opt = RMSprop(lr=1e-3)
    x = rng.random((4, 64, 64, 3)).astype(np.float32)
    y = np.array([0, 1, 0, 1])
    conv3 = net.params["A_conv2d_3/kernel"].copy()
    for _ in range(100):
        train_step(net, x, y, opt, rng)
    assert net.params[f"{DONOR_LAYER}/kernel"].tobytes() == before
    assert not np.array_equal(net.params["A_conv2d_3/kernel"], conv3)
    assert not any(k.startswith(DONOR_LAYER) for k in opt.cache)


# -- config and weights -------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = ModelConfig(filters=(8, 16, 16, 32), dense_units=64, dropout_conv=0.2,
                      output_activation="sigmoid", hidden_activation="sigmoid")
    assert config_from_text(config_to_text(cfg)) == cfg
    save_config(cfg, tmp_path / "m.ini")
    assert load_config(tmp_path / "m.ini") == cfg


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        config_from_text("[model]\nfilterz = 1,2,3,4\n")


def test_hidden_activation_flag_is_used():
    net = build_mmv(replace(SMALL, hidden_activation="sigmoid"))
    assert net.layer("V_dense_1").activation == "sigmoid"


def test_weights_roundtrip_bit_exact(tmp_path):
    net = build_mmv(SMALL, seed=4)
    save_weights(net.params, tmp_path / "w.mmwt")
    back = load_weights(tmp_path / "w.mmwt", network=build_mmv(SMALL, seed=9))
    assert back.keys() == net.params.keys()
    for k in back:
        assert back[k].dtype == np.float32
        assert back[k].tobytes() == net.params[k].tobytes()


def test_weights_layout_header():
    data = dumps_weights({"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert data[:4] == b"MMWT"
    assert data[4:6] == (1).to_bytes(2, "little")
    assert data[6:10] == (1).to_bytes(4, "little")
    assert data[10:14] == (1).to_bytes(4, "little") and data[14:15] == b"a"
    assert data[15:27] == b"".join(v.to_bytes(4, "little") for v in (2, 2, 3))
    assert len(data) == 27 + 6 * 4


@pytest.mark.parametrize("cut", [5, 9, 14, 20, -1])
def test_weights_truncated(cut):
    data = dumps_weights({"layer/kernel": np.ones((2, 2), np.float32)})
    with pytest.raises(WeightsFormatError, match="truncated"):
        loads_weights(data[:cut])


def test_weights_bad_magic_version_trailing():
    data = dumps_weights({"k": np.ones(2, np.float32)})
    with pytest.raises(WeightsFormatError, match="magic"):
        loads_weights(b"XXXX" + data[4:])
    with pytest.raises(WeightsFormatError, match="version"):
        loads_weights(data[:4] + (7).to_bytes(2, "little") + data[6:])
    with pytest.raises(WeightsFormatError, match="trailing"):
        loads_weights(data + b"\0")


def test_weights_shape_mismatch_on_load(tmp_path):
    net = build_mmv(SMALL)
    store = dict(net.params)
    store["V_conv2d_1/kernel"] = np.zeros((3, 3, 3, 5), np.float32)
    save_weights(store, tmp_path / "bad.mmwt")
    with pytest.raises(ShapeError, match="V_conv2d_1/kernel"):
        load_weights(tmp_path / "bad.mmwt", network=build_mmv(SMALL))


def test_mmv_donor_file_binds_by_name(tmp_path):
    v = build_mmv(SMALL, seed=2)
    save_weights({f"{DONOR_LAYER}/kernel": v.params[f"{DONOR_LAYER}/kernel"]}, tmp_path / "d.mmwt")
    va = build_mmva(SMALL, tmp_path / "d.mmwt")
    assert va.params[f"{DONOR_LAYER}/kernel"].tobytes() == v.params[f"{DONOR_LAYER}/kernel"].tobytes()
