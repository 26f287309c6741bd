"""Network representation, loaders, convolution lowering and segmentation.

Networks are flat layer lists in the expanded analysis form: every hidden
layer appears as an affine (dense) layer followed by an explicit ReLU
layer, and the output layer is affine with no activation.  Convolutions in
the on-disk format are lowered to equivalent dense layers at load time so
every downstream transformer sees affine maps only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .domain import INPUT_LAYER

DENSE = "dense"
RELU = "relu"
RESIDUAL_ADD = "residual_add"

# Layer kinds that carry an affine transformation (may end a block).
AFFINE_KINDS = (DENSE, RESIDUAL_ADD)


class NetworkFormatError(ValueError):
    """Malformed network file or inconsistent layer shapes."""


class DatasetFormatError(ValueError):
    """Malformed dataset CSV row."""


@dataclass
class LayerSpec:
    """One layer: dense (weights/bias), relu, or residual_add (skip_from).

    ``width`` is the layer's output width, fixed at validation time.
    """

    kind: str
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    skip_from: Optional[int] = None
    width: int = 0


@dataclass
class NetworkSpec:
    """A loaded network plus its input geometry."""

    input_width: int
    layers: List[LayerSpec]
    input_domain: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.validate()

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def output_width(self) -> int:
        return self.layers[-1].width

    def width_of(self, index: int) -> int:
        if index == INPUT_LAYER:
            return self.input_width
        return self.layers[index].width

    def affine_indices(self) -> List[int]:
        return [i for i, l in enumerate(self.layers) if l.kind in AFFINE_KINDS]

    def validate(self) -> None:
        if self.input_width < 1:
            raise NetworkFormatError("input_width must be positive")
        if not self.layers:
            raise NetworkFormatError("network has no layers")
        lo, hi = self.input_domain
        if not lo <= hi:
            raise NetworkFormatError("input_domain is empty")
        if self.layers[-1].kind != DENSE:
            raise NetworkFormatError("final layer must be dense (no output activation)")
        prev = self.input_width
        for i, layer in enumerate(self.layers):
            if layer.kind == DENSE:
                w, b = layer.weights, layer.bias
                if w is None or b is None:
                    raise NetworkFormatError(f"layer {i}: dense layer needs weights and bias")
                if w.ndim != 2:
                    raise NetworkFormatError(f"layer {i}: weights must be a matrix")
                if w.shape[0] != b.shape[0]:
                    raise NetworkFormatError(
                        f"layer {i}: bias length {b.shape[0]} != weight rows {w.shape[0]}"
                    )
                if w.shape[1] != prev:
                    raise NetworkFormatError(
                        f"layer {i}: weight cols {w.shape[1]} != predecessor width {prev}"
                    )
                layer.width = w.shape[0]
            elif layer.kind == RELU:
                if layer.weights is not None or layer.bias is not None:
                    raise NetworkFormatError(f"layer {i}: relu carries no parameters")
                layer.width = prev
            elif layer.kind == RESIDUAL_ADD:
                s = layer.skip_from
                if s is None or not 0 <= s < i - 1:
                    raise NetworkFormatError(
                        f"layer {i}: skip_from must point at least two layers back"
                    )
                if self.layers[s].width != prev:
                    raise NetworkFormatError(
                        f"layer {i}: skip width {self.layers[s].width} != predecessor width {prev}"
                    )
                layer.width = prev
            else:
                raise NetworkFormatError(f"layer {i}: unsupported kind {layer.kind!r}")
            prev = layer.width

    def forward(self, x: np.ndarray, keep_layers: bool = False):
        """Exact forward pass; ``x`` may be a single vector or a batch.

        With ``keep_layers`` returns the list of every layer's output.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_width:
            raise NetworkFormatError(
                f"input width {x.shape[-1]} != network input width {self.input_width}"
            )
        outs: List[np.ndarray] = []
        cur = x
        for layer in self.layers:
            if layer.kind == DENSE:
                cur = cur @ layer.weights.T + layer.bias
            elif layer.kind == RELU:
                cur = np.maximum(cur, 0.0)
            else:
                cur = cur + outs[layer.skip_from]
            outs.append(cur)
        return outs if keep_layers else cur


@dataclass(frozen=True)
class Segmentation:
    """Partition of the layer list into blocks ending at affine layers."""

    blocks: Tuple[Tuple[int, int], ...]
    sigma: int

    def block_of(self, layer: int) -> int:
        for b, (s, e) in enumerate(self.blocks):
            if s <= layer <= e:
                return b
        raise KeyError(layer)

    def end_layers(self) -> dict:
        return {e: b for b, (_, e) in enumerate(self.blocks)}

    def summary_reference(self, block: int) -> int:
        """Layer whose outputs the block's summary ranges over.

        The first block summarises down to the network input; later blocks
        stop at their own first layer, whose transformation is applied
        separately after a summary jump.
        """
        start, _ = self.blocks[block]
        return INPUT_LAYER if start == 0 else start


@dataclass(frozen=True)
class DatasetRecord:
    """One labelled input vector."""

    label: int
    pixels: np.ndarray


def lower_convolution(
    kernel,
    bias,
    stride: int,
    padding: int,
    in_shape: Sequence[int],
    out_channels: int,
) -> LayerSpec:
    """Lower a 2-d convolution to an equivalent dense layer.

    ``kernel`` is nested [out_c][kh][kw][in_c]; tensors are flattened
    row-major over (H, W, C) with channel fastest.  Zero padding.
    """
    k = np.asarray(kernel, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    h, w, c = (int(v) for v in in_shape)
    if k.ndim != 4:
        raise NetworkFormatError("kernel must be nested [out_c][kh][kw][in_c]")
    oc, kh, kw, ic = k.shape
    if oc != out_channels:
        raise NetworkFormatError(f"kernel out_channels {oc} != declared {out_channels}")
    if ic != c:
        raise NetworkFormatError(f"kernel in_channels {ic} != input channels {c}")
    if b.shape != (oc,):
        raise NetworkFormatError("conv bias must have one entry per output channel")
    if stride < 1 or padding < 0:
        raise NetworkFormatError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise NetworkFormatError("kernel larger than padded input")

    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    n_in = h * w * c
    n_out = oh * ow * oc
    weights = np.zeros((n_out, n_in))
    for yo in range(oh):
        for xo in range(ow):
            for co in range(oc):
                row = (yo * ow + xo) * oc + co
                for dy in range(kh):
                    yi = yo * stride - padding + dy
                    if not 0 <= yi < h:
                        continue
                    for dx in range(kw):
                        xi = xo * stride - padding + dx
                        if not 0 <= xi < w:
                            continue
                        cols = (yi * w + xi) * c + np.arange(c)
                        weights[row, cols] += k[co, dy, dx, :]
    full_bias = np.tile(b, oh * ow)
    return LayerSpec(kind=DENSE, weights=weights, bias=full_bias, width=n_out)


def _layer_from_dict(entry: dict, prev_width: int) -> LayerSpec:
    kind = entry.get("kind")
    if kind == DENSE:
        return LayerSpec(
            kind=DENSE,
            weights=np.asarray(entry["weights"], dtype=np.float64),
            bias=np.asarray(entry["bias"], dtype=np.float64),
        )
    if kind == RELU:
        return LayerSpec(kind=RELU)
    if kind == RESIDUAL_ADD:
        return LayerSpec(kind=RESIDUAL_ADD, skip_from=int(entry["skip_from"]))
    if kind == "conv":
        in_shape = entry["in_shape"]
        if int(np.prod(in_shape)) != prev_width:
            raise NetworkFormatError(
                f"conv in_shape {in_shape} does not match predecessor width {prev_width}"
            )
        return lower_convolution(
            entry["kernel"],
            entry["bias"],
            int(entry["stride"]),
            int(entry["padding"]),
            in_shape,
            int(entry["out_channels"]),
        )
    raise NetworkFormatError(f"unsupported layer kind {kind!r}")


def network_from_dict(data: dict) -> NetworkSpec:
    try:
        input_width = int(data["input_width"])
        domain = tuple(float(v) for v in data.get("input_domain", (0.0, 1.0)))
        raw_layers = data["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"malformed network description: {exc}") from exc
    layers = []
    prev = input_width
    for entry in raw_layers:
        layer = _layer_from_dict(entry, prev)
        if layer.kind == DENSE:
            prev = layer.weights.shape[0]
        layers.append(layer)
    net = NetworkSpec(input_width=input_width, layers=layers, input_domain=domain)
    return net


def load_network(path: str) -> NetworkSpec:
    """Load a network JSON file, lowering any convolution layers."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: not valid JSON: {exc}") from exc
    return network_from_dict(data)


def network_to_dict(net: NetworkSpec) -> dict:
    layers = []
    for layer in net.layers:
        if layer.kind == DENSE:
            layers.append(
                {
                    "kind": DENSE,
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                }
            )
        elif layer.kind == RELU:
            layers.append({"kind": RELU})
        else:
            layers.append({"kind": RESIDUAL_ADD, "skip_from": layer.skip_from})
    return {
        "input_width": net.input_width,
        "input_domain": list(net.input_domain),
        "layers": layers,
    }


def save_network(net: NetworkSpec, path: str) -> None:
    """Write a network back to JSON; float repr round-trips IEEE doubles."""
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def segment_network(net: NetworkSpec, sigma: int) -> Segmentation:
    """Greedily tile the layer list into blocks of ``sigma`` affine layers.

    Blocks end at affine layers (dense or residual-add); the last block may
    hold fewer than sigma.  A tentative block end that would split a
    residual unit (the closed span from the skip source through the add
    layer) is pushed forward to the unit's add layer so every unit, entry
    included, sits inside one block.
    """
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    units = [
        (layer.skip_from, i)
        for i, layer in enumerate(net.layers)
        if layer.kind == RESIDUAL_ADD
    ]

    def widen(end: int) -> int:
        moved = True
        while moved:
            moved = False
            for s, a in units:
                if s <= end < a:
                    end = a
                    moved = True
        return end

    blocks = []
    start = 0
    affine = 0
    i = 0
    n = net.n_layers
    while i < n:
        if net.layers[i].kind in AFFINE_KINDS:
            affine += 1
            if affine == sigma:
                end = widen(i)
                blocks.append((start, end))
                start = end + 1
                affine = 0
                i = end
        i += 1
    if start < n:
        blocks.append((start, n - 1))  # final layer is affine by invariant
    return Segmentation(blocks=tuple(blocks), sigma=sigma)


def load_dataset(path: str, normalize: bool = False) -> List[DatasetRecord]:
    """Read ``label,p1,...,pn`` CSV rows; all rows must agree on pixel count.

    With ``normalize`` pixels are divided by 255 then clamped to [0, 1].
    """
    records: List[DatasetRecord] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) < 2:
                raise DatasetFormatError(f"{path}:{lineno}: need a label and pixels")
            try:
                label = int(float(cells[0]))
                pixels = np.array([float(c) for c in cells[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric cell: {exc}") from exc
            if width is None:
                width = pixels.shape[0]
            elif pixels.shape[0] != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: row has {pixels.shape[0]} pixels, expected {width}"
                )
            if normalize:
                pixels = np.clip(pixels / 255.0, 0.0, 1.0)
            records.append(DatasetRecord(label=label, pixels=pixels))
    return records
