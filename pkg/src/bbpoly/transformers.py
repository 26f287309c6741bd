"""Abstract transformers seeding each layer's symbolic constraints.

Affine layers get exact constraint pairs (coefficients are the weights,
constant the bias).  ReLU layers get the per-neuron triangle relaxation:
lower constraint c*x with c in {0, 1} (c = 0 only when |l| > |u|), upper
constraint the chord through (l, 0) and (u, u).  Residual additions are
exact: identity over the immediate predecessor plus an identity pending
contribution tagged with the skip source.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .domain import (
    MODE_IDENTITY,
    MODE_MIXED,
    MODE_ZERO,
    BoundsVector,
    ConstraintMatrix,
    ReluRelaxation,
)
from .model import DENSE, RESIDUAL_ADD, LayerSpec


def affine_abstract(layer: LayerSpec, reference: int) -> ConstraintMatrix:
    """Exact constraint pair for a dense layer over its predecessor."""
    if layer.kind != DENSE:
        raise ValueError(f"affine_abstract expects a dense layer, got {layer.kind}")
    return ConstraintMatrix.exact(reference, layer.weights, layer.bias)


def relu_abstract(src_bounds: BoundsVector) -> Tuple[ReluRelaxation, BoundsVector]:
    """Relaxation and output box for a ReLU over the given source bounds.

    Output intervals follow the relaxation mode: [0, 0] for always-off
    neurons, [l, u] for always-on, [0, u] for straddling ones (the symbolic
    lower constraint c*x may dip below 0; the interval is kept at 0
    independently).
    """
    lo, hi = src_bounds.lo, src_bounds.hi
    n = len(src_bounds)
    zero = hi <= 0.0
    ident = ~zero & (lo >= 0.0)
    mixed = ~zero & ~ident

    c = np.zeros(n)
    slope = np.zeros(n)
    intercept = np.zeros(n)
    modes = np.full(n, MODE_ZERO, dtype=np.int8)

    c[ident] = 1.0
    slope[ident] = 1.0
    modes[ident] = MODE_IDENTITY

    if np.any(mixed):
        ml, mh = lo[mixed], hi[mixed]
        span = mh - ml  # mixed implies l < 0 < u, so span > 0
        c[mixed] = np.where(np.abs(ml) > np.abs(mh), 0.0, 1.0)
        slope[mixed] = mh / span
        intercept[mixed] = -mh * ml / span
        modes[mixed] = MODE_MIXED

    out_lo = np.where(ident, lo, 0.0)
    out_hi = np.maximum(hi, 0.0)
    relax = ReluRelaxation(c, slope, intercept, modes)
    return relax, BoundsVector(out_lo, out_hi)


def residual_add_abstract(layer: LayerSpec, reference: int) -> ConstraintMatrix:
    """Exact constraint pair x_out = x_pred + x_skip for a residual add.

    Represented as identity over the predecessor with an identity pending
    contribution keyed by the skip source; the back-substitution engine
    folds the pending part in once its walk reaches that layer.
    """
    if layer.kind != RESIDUAL_ADD:
        raise ValueError(f"residual_add_abstract expects residual_add, got {layer.kind}")
    eye = np.eye(layer.width)
    zero = np.zeros(layer.width)
    return ConstraintMatrix(
        reference,
        eye.copy(),
        zero.copy(),
        eye.copy(),
        zero.copy(),
        skips={layer.skip_from: (eye.copy(), eye.copy())},
    )
