"""Seeded synthetic networks and datasets for property tests and `gen`."""

from __future__ import annotations

import csv
from typing import List, Optional, Tuple

import numpy as np

from .model import (
    DENSE,
    RELU,
    RESIDUAL_ADD,
    DatasetRecord,
    LayerSpec,
    NetworkSpec,
    network_from_dict,
)


def demo_network() -> NetworkSpec:
    """The 2-2-2-2 demo net used by selfcheck: +/-1 weights, biases 0 and 1.

    Inputs live in [-1, 1]; hidden layers are expanded into explicit dense
    and relu layers, the output layer is dense only.
    """
    return NetworkSpec(
        input_width=2,
        input_domain=(-1.0, 1.0),
        layers=[
            LayerSpec(DENSE, weights=np.array([[1.0, 1.0], [1.0, -1.0]]), bias=np.zeros(2)),
            LayerSpec(RELU),
            LayerSpec(DENSE, weights=np.array([[1.0, 1.0], [1.0, -1.0]]), bias=np.zeros(2)),
            LayerSpec(RELU),
            LayerSpec(DENSE, weights=np.array([[1.0, 1.0], [0.0, 1.0]]), bias=np.array([1.0, 0.0])),
        ],
    )


def _dense(rng: np.random.Generator, n_out: int, n_in: int) -> dict:
    return {
        "kind": DENSE,
        "weights": rng.uniform(-1.0, 1.0, size=(n_out, n_in)).tolist(),
        "bias": rng.uniform(-1.0, 1.0, size=n_out).tolist(),
    }


def random_dense_network(rng: np.random.Generator, n_affine: Optional[int] = None) -> NetworkSpec:
    """Alternating dense/relu net, 2..5 affine layers, widths 2..8."""
    if n_affine is None:
        n_affine = int(rng.integers(2, 6))
    widths = [int(rng.integers(2, 9)) for _ in range(n_affine + 1)]
    layers = []
    for i in range(n_affine):
        layers.append(_dense(rng, widths[i + 1], widths[i]))
        if i < n_affine - 1:
            layers.append({"kind": RELU})
    return network_from_dict(
        {"input_width": widths[0], "input_domain": [0.0, 1.0], "layers": layers}
    )


# Conv geometries keeping every layer width <= 8: (H, W, C, kh, kw, stride, padding).
_CONV_GEOMETRIES = (
    (4, 2, 1, 2, 2, 2, 0),
    (2, 3, 1, 2, 2, 1, 0),
    (2, 2, 2, 2, 2, 1, 0),
    (3, 2, 1, 2, 1, 1, 0),
    (2, 2, 1, 2, 2, 2, 1),
)


def random_conv_network(rng: np.random.Generator) -> NetworkSpec:
    """Conv head (lowered through the loader) followed by a dense tail."""
    h, w, c, kh, kw, stride, padding = _CONV_GEOMETRIES[int(rng.integers(len(_CONV_GEOMETRIES)))]
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    max_oc = max(1, 8 // (oh * ow))
    oc = int(rng.integers(1, max_oc + 1))
    conv = {
        "kind": "conv",
        "kernel": rng.uniform(-1.0, 1.0, size=(oc, kh, kw, c)).tolist(),
        "bias": rng.uniform(-1.0, 1.0, size=oc).tolist(),
        "stride": stride,
        "padding": padding,
        "in_shape": [h, w, c],
        "out_channels": oc,
    }
    conv_out = oh * ow * oc
    mid = int(rng.integers(2, 9))
    out = int(rng.integers(2, 6))
    layers = [
        conv,
        {"kind": RELU},
        _dense(rng, mid, conv_out),
        {"kind": RELU},
        _dense(rng, out, mid),
    ]
    return network_from_dict(
        {"input_width": h * w * c, "input_domain": [0.0, 1.0], "layers": layers}
    )


def random_residual_network(rng: np.random.Generator) -> NetworkSpec:
    """Net containing one residual unit: entry relu, two dense layers, add."""
    w_in = int(rng.integers(2, 9))
    w_unit = int(rng.integers(2, 9))
    w_mid = int(rng.integers(2, 9))
    w_out = int(rng.integers(2, 6))
    lead = bool(rng.integers(2))
    layers = []
    prev = w_in
    if lead:
        w_lead = int(rng.integers(2, 9))
        layers += [_dense(rng, w_lead, prev), {"kind": RELU}]
        prev = w_lead
    layers += [_dense(rng, w_unit, prev), {"kind": RELU}]
    entry = len(layers) - 1  # the relu whose output both branches consume
    layers += [
        _dense(rng, w_mid, w_unit),
        {"kind": RELU},
        _dense(rng, w_unit, w_mid),
        {"kind": RESIDUAL_ADD, "skip_from": entry},
        {"kind": RELU},
        _dense(rng, w_out, w_unit),
    ]
    return network_from_dict(
        {"input_width": w_in, "input_domain": [0.0, 1.0], "layers": layers}
    )


def random_network(seed: int, kind: str = "dense") -> NetworkSpec:
    rng = np.random.default_rng(seed)
    if kind == "dense":
        return random_dense_network(rng)
    if kind == "conv":
        return random_conv_network(rng)
    if kind == "residual":
        return random_residual_network(rng)
    raise ValueError(f"unknown network kind {kind!r}")


def acceptance_suite() -> List[Tuple[str, NetworkSpec]]:
    """The fixed 50-net roster: 10 conv, 10 residual, 30 dense (seeded)."""
    nets = []
    for i in range(10):
        nets.append((f"conv-{i}", random_network(1000 + i, "conv")))
    for i in range(10):
        nets.append((f"residual-{i}", random_network(2000 + i, "residual")))
    for i in range(30):
        nets.append((f"dense-{i}", random_network(3000 + i, "dense")))
    return nets


def random_dataset(
    net: NetworkSpec, rng: np.random.Generator, rows: int, mislabel: float = 0.2
) -> List[DatasetRecord]:
    """Uniform inputs labelled by the net itself; a fraction mislabelled."""
    lo, hi = net.input_domain
    records = []
    for _ in range(rows):
        pixels = rng.uniform(lo, hi, size=net.input_width)
        label = int(np.argmax(net.forward(pixels)))
        if rng.random() < mislabel:
            label = (label + 1) % net.output_width
        records.append(DatasetRecord(label=label, pixels=pixels))
    return records


def write_dataset_csv(records: List[DatasetRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for rec in records:
            writer.writerow([rec.label] + [repr(float(p)) for p in rec.pixels])
