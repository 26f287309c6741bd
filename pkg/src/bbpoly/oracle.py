"""Independent correctness references for the analyzer.

Naive interval propagation (sound by construction, no symbolic tracking),
concrete sampling with corner enumeration for small inputs, and width
comparison between analysis results.  These never share code with the
back-substitution path they check.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .analyzer import AnalysisResult
from .domain import BoundsVector
from .model import DENSE, RELU, NetworkSpec


def interval_propagate(net: NetworkSpec, input_bounds: BoundsVector) -> List[BoundsVector]:
    """Plain interval arithmetic through every layer.

    Dense layers use the coefficient sign rule on the raw weights; ReLU
    clamps the interval at zero; residual additions add the two branches'
    intervals.  Strictly looser than back-substituted bounds but trivially
    sound.
    """
    out: List[BoundsVector] = []
    cur = input_bounds
    for layer in net.layers:
        if layer.kind == DENSE:
            w = layer.weights
            pos = np.maximum(w, 0.0)
            neg = np.minimum(w, 0.0)
            lo = layer.bias + pos @ cur.lo + neg @ cur.hi
            hi = layer.bias + pos @ cur.hi + neg @ cur.lo
            cur = BoundsVector(lo, hi)
        elif layer.kind == RELU:
            cur = BoundsVector(np.maximum(cur.lo, 0.0), np.maximum(cur.hi, 0.0))
        else:
            skip = out[layer.skip_from]
            cur = BoundsVector(cur.lo + skip.lo, cur.hi + skip.hi)
        out.append(cur)
    return out


@dataclass
class SampleCheckReport:
    passed: bool
    worst_violation: float
    worst_layer: Optional[int]
    n_points: int

    def __bool__(self) -> bool:
        return self.passed


def sample_check(
    net: NetworkSpec,
    input_bounds: BoundsVector,
    layer_bounds: Sequence[BoundsVector],
    n_samples: int = 1000,
    seed: int = 0,
    rtol: float = 1e-6,
    corners: bool = True,
) -> SampleCheckReport:
    """Check concrete executions stay inside every layer's reported box.

    Draws uniform points in the input region and, for nets with at most 12
    inputs, also enumerates the region's corners (affine extrema are often
    realised there).  Violation is measured relative to 1 + |bound|.
    """
    points = []
    if n_samples > 0:
        rng = np.random.default_rng(seed)
        points.append(
            rng.uniform(input_bounds.lo, input_bounds.hi, size=(n_samples, len(input_bounds)))
        )
    if corners and len(input_bounds) <= 12:
        pairs = [(float(l), float(h)) for l, h in zip(input_bounds.lo, input_bounds.hi)]
        points.append(np.array(list(itertools.product(*pairs))))
    if not points:
        warnings.warn("sample_check called with no samples: vacuous pass")
        return SampleCheckReport(True, float("-inf"), None, 0)

    batch = np.concatenate(points, axis=0)
    outs = net.forward(batch, keep_layers=True)
    worst = float("-inf")
    worst_layer = None
    for k, values in enumerate(outs):
        v = layer_bounds[k].violation(values)
        if v > worst:
            worst = v
            worst_layer = k
    return SampleCheckReport(worst <= rtol, worst, worst_layer, batch.shape[0])


@dataclass
class WidthComparison:
    """Elementwise interval-width ratios between two analyses (a over b)."""

    per_layer: List[np.ndarray]
    mean_ratio: float
    max_ratio: float
    mean_width_a: float
    mean_width_b: float


def compare_widths(a: AnalysisResult, b: AnalysisResult) -> WidthComparison:
    """Width ratios a/b per neuron; degenerate 0/0 widths count as ratio 1."""
    if len(a.bounds) != len(b.bounds):
        raise ValueError("analyses cover different layer counts")
    ratios: List[np.ndarray] = []
    for ba, bb in zip(a.bounds, b.bounds):
        wa, wb = ba.widths(), bb.widths()
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(wb > 0, wa / np.where(wb > 0, wb, 1.0), np.where(wa > 0, np.inf, 1.0))
        ratios.append(r)
    flat = np.concatenate(ratios)
    finite = flat[np.isfinite(flat)]
    return WidthComparison(
        per_layer=ratios,
        mean_ratio=float(np.mean(finite)) if finite.size else 1.0,
        max_ratio=float(np.max(flat)) if flat.size else 1.0,
        mean_width_a=float(np.mean(np.concatenate([x.widths() for x in a.bounds]))),
        mean_width_b=float(np.mean(np.concatenate([x.widths() for x in b.bounds]))),
    )
