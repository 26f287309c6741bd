import json

import numpy as np
import pytest

from bbpoly.model import (
    DENSE,
    RELU,
    RESIDUAL_ADD,
    DatasetFormatError,
    NetworkFormatError,
    NetworkSpec,
    LayerSpec,
    load_dataset,
    load_network,
    lower_convolution,
    network_from_dict,
    network_to_dict,
    save_network,
    segment_network,
)
from bbpoly.synth import random_network


def demo_dict():
    return {
        "input_width": 2,
        "input_domain": [-1.0, 1.0],
        "layers": [
            {"kind": "dense", "weights": [[1, 1], [1, -1]], "bias": [0, 0]},
            {"kind": "relu"},
            {"kind": "dense", "weights": [[1, 1], [1, -1]], "bias": [0, 0]},
            {"kind": "relu"},
            {"kind": "dense", "weights": [[1, 1], [0, 1]], "bias": [1, 0]},
        ],
    }


def test_load_demo_network(tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(demo_dict()))
    net = load_network(str(path))
    assert [l.kind for l in net.layers] == [DENSE, RELU, DENSE, RELU, DENSE]
    assert net.input_width == 2 and net.output_width == 2
    assert net.input_domain == (-1.0, 1.0)


def test_single_identity_layer():
    net = network_from_dict(
        {"input_width": 3, "layers": [{"kind": "dense", "weights": np.eye(3).tolist(), "bias": [0, 0, 0]}]}
    )
    assert net.n_layers == 1
    assert np.array_equal(net.forward(np.array([1.0, -2.0, 0.5])), [1.0, -2.0, 0.5])


def test_bias_length_mismatch_rejected():
    bad = demo_dict()
    bad["layers"][0]["bias"] = [0, 0, 0]
    with pytest.raises(NetworkFormatError):
        network_from_dict(bad)


def test_width_chain_mismatch_rejected():
    bad = demo_dict()
    bad["layers"][2]["weights"] = [[1, 1, 1], [1, -1, 0]]
    with pytest.raises(NetworkFormatError):
        network_from_dict(bad)


def test_unsupported_kind_rejected():
    bad = demo_dict()
    bad["layers"][1] = {"kind": "maxpool"}
    with pytest.raises(NetworkFormatError):
        network_from_dict(bad)


def test_final_layer_must_be_dense():
    bad = demo_dict()
    bad["layers"].append({"kind": "relu"})
    with pytest.raises(NetworkFormatError):
        network_from_dict(bad)


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(NetworkFormatError):
        load_network(str(path))


def test_roundtrip_bit_equal(tmp_path, rng):
    net = random_network(7, "residual")
    path = tmp_path / "net.json"
    save_network(net, str(path))
    back = load_network(str(path))
    assert len(back.layers) == len(net.layers)
    for a, b in zip(net.layers, back.layers):
        assert a.kind == b.kind
        if a.kind == DENSE:
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
        if a.kind == RESIDUAL_ADD:
            assert a.skip_from == b.skip_from
    assert network_to_dict(back) == network_to_dict(net)


# --- convolution lowering -------------------------------------------------


def naive_conv2d(x, kernel, bias, stride, padding):
    """Independent direct convolution over an H,W,C tensor (channel fastest)."""
    k = np.asarray(kernel, dtype=np.float64)
    oc, kh, kw, c = k.shape
    h, w = x.shape[0], x.shape[1]
    padded = np.zeros((h + 2 * padding, w + 2 * padding, c))
    padded[padding : padding + h, padding : padding + w, :] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((oh, ow, oc))
    for yo in range(oh):
        for xo in range(ow):
            patch = padded[yo * stride : yo * stride + kh, xo * stride : xo * stride + kw, :]
            for co in range(oc):
                out[yo, xo, co] = np.sum(patch * k[co]) + bias[co]
    return out


def test_conv_identity_1x1():
    layer = lower_convolution([[[[1.0]]]], [0.0], 1, 0, (3, 3, 1), 1)
    assert np.array_equal(layer.weights, np.eye(9))
    assert np.array_equal(layer.bias, np.zeros(9))


def test_conv_average_kernel_matches_direct():
    kernel = np.full((1, 2, 2, 1), 0.25)
    layer = lower_convolution(kernel, [0.0], 1, 0, (3, 3, 1), 1)
    assert layer.weights.shape == (4, 9)
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.uniform(-1, 1, size=(3, 3, 1))
        direct = naive_conv2d(x, kernel, [0.0], 1, 0).ravel()
        lowered = layer.weights @ x.ravel() + layer.bias
        assert np.max(np.abs(direct - lowered)) < 1e-12


def test_conv_strided_padded_multichannel_matches_direct():
    rng = np.random.default_rng(12)
    kernel = rng.uniform(-1, 1, size=(2, 3, 3, 2))
    bias = rng.uniform(-1, 1, size=2)
    layer = lower_convolution(kernel, bias, 2, 1, (4, 4, 2), 2)
    for _ in range(100):
        x = rng.uniform(-1, 1, size=(4, 4, 2))
        direct = naive_conv2d(x, kernel, bias, 2, 1).ravel()
        lowered = layer.weights @ x.ravel() + layer.bias
        assert np.max(np.abs(direct - lowered)) < 1e-12


def test_conv_output_geometry():
    # 3x3 kernel, stride 2, padding 1 on 4x4: floor((4+2-3)/2)+1 = 2 per side
    layer = lower_convolution(np.zeros((1, 3, 3, 1)), [0.0], 2, 1, (4, 4, 1), 1)
    assert layer.weights.shape == (4, 16)


def test_conv_kernel_too_large_rejected():
    with pytest.raises(NetworkFormatError):
        lower_convolution(np.zeros((1, 5, 5, 1)), [0.0], 1, 0, (3, 3, 1), 1)


def test_conv_loaded_network_matches_direct(rng):
    net = random_network(101, "conv")
    x = rng.uniform(0, 1, size=net.input_width)
    # forward through the lowered net vs nothing blowing up shape-wise
    out = net.forward(x)
    assert out.shape == (net.output_width,)


# --- segmentation -----------------------------------------------------------


def alternating_net(n_affine, width=2):
    layers = []
    for i in range(n_affine):
        layers.append(
            {"kind": "dense", "weights": np.eye(width).tolist(), "bias": [0.0] * width}
        )
        if i < n_affine - 1:
            layers.append({"kind": "relu"})
    return network_from_dict({"input_width": width, "layers": layers})


def test_segment_six_affine_sigma3():
    seg = segment_network(alternating_net(6), 3)
    assert seg.blocks == ((0, 4), (5, 10))


def test_segment_demo_sigma2(demo_net):
    seg = segment_network(demo_net, 2)
    assert seg.blocks == ((0, 2), (3, 4))
    assert seg.summary_reference(0) == -1
    assert seg.summary_reference(1) == 3


def test_segment_oversized_sigma_single_block():
    net = alternating_net(3)
    seg = segment_network(net, 100)
    assert seg.blocks == ((0, net.n_layers - 1),)


def test_segment_tiling_property():
    for seed in range(40):
        net = random_network(400 + seed, ("dense", "conv", "residual")[seed % 3])
        for sigma in range(1, 11):
            seg = segment_network(net, sigma)
            flat = [k for s, e in seg.blocks for k in range(s, e + 1)]
            assert flat == list(range(net.n_layers))
            for _, e in seg.blocks:
                assert net.layers[e].kind in (DENSE, RESIDUAL_ADD)


def test_segment_never_splits_residual_unit():
    for seed in range(30):
        net = random_network(500 + seed, "residual")
        units = [
            (l.skip_from, i) for i, l in enumerate(net.layers) if l.kind == RESIDUAL_ADD
        ]
        for sigma in range(1, 6):
            seg = segment_network(net, sigma)
            for s, a in units:
                b_entry = seg.block_of(s)
                b_add = seg.block_of(a)
                assert b_entry == b_add, f"unit {s}..{a} split across blocks (sigma={sigma})"


def test_forward_residual_matches_manual(rng):
    net = random_network(42, "residual")
    x = rng.uniform(0, 1, size=net.input_width)
    outs = net.forward(x, keep_layers=True)
    cur = x
    ref = []
    for layer in net.layers:
        if layer.kind == DENSE:
            cur = layer.weights @ cur + layer.bias
        elif layer.kind == RELU:
            cur = np.maximum(cur, 0)
        else:
            cur = cur + ref[layer.skip_from]
        ref.append(cur)
    for a, b in zip(outs, ref):
        assert np.allclose(a, b, atol=1e-12)


# --- datasets ---------------------------------------------------------------


def test_load_dataset_normalize(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("7,0,128,255\n")
    (rec,) = load_dataset(str(path), normalize=True)
    assert rec.label == 7
    assert np.allclose(rec.pixels, [0.0, 128 / 255, 1.0])


def test_load_dataset_row_width_mismatch(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("1,0.5,0.5\n2,0.5\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(str(path))


def test_load_dataset_non_numeric(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("1,0.5,oops\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(str(path))


def test_load_dataset_order_preserved(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("".join(f"{i % 10},{i},{i}\n" for i in range(100)))
    records = load_dataset(str(path))
    assert len(records) == 100
    assert [r.pixels[0] for r in records] == list(map(float, range(100)))
